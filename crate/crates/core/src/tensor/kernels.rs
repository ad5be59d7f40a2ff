//! Raw numeric kernels. Layouts are NCHW for images and row-major for
//! matrices; shape validation happens in the graph layer.

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Range of output columns whose input column `ox*stride + kx - pad` is in bounds.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.out_w, self.width, kx, self.stride, self.padding)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.out_h, self.height, ky, self.stride, self.padding)
    }
}

fn valid_range(out: usize, inp: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < inp
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if inp + pad > k {
        ((inp + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfold one image `[C, H, W]` into a `[C*KH*KW, OH*OW]` column matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    col.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            let (oy0, oy1) = g.valid_rows(ky);
            for kx in 0..g.kernel_w {
                let (ox0, ox1) = g.valid_cols(kx);
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.padding;
                    let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.padding;
                        dst_row[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox] = src_row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into `[C, H, W]`.
pub(crate) fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, input_grad: &mut [T]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut input_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            let (oy0, oy1) = g.valid_rows(ky);
            for kx in 0..g.kernel_w {
                let (ox0, ox1) = g.valid_cols(kx);
                let src = &col[row * cols..(row + 1) * cols];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.padding;
                    let dst_row = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in ox0..ox1 {
                        let ix = ox * g.stride + kx - g.padding;
                        dst_row[ix] = dst_row[ix] + src_row[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution for a batch. `weight` is `[OC, C*KH*KW]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &[T],
    batch: usize,
    weight: &[T],
    bias: &[T],
    out_channels: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let k = g.col_rows();
    let p = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); batch * out_channels * p];
    let mut col = vec![T::zero(); k * p];
    for n in 0..batch {
        im2col(&input[n * in_len..(n + 1) * in_len], g, &mut col);
        let dst = &mut out[n * out_channels * p..(n + 1) * out_channels * p];
        for (oc, b) in bias.iter().enumerate() {
            dst[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v = *b);
        }
        T::gemm(
            out_channels,
            k,
            p,
            T::one(),
            weight,
            (k as isize, 1),
            &col,
            (p as isize, 1),
            T::one(),
            dst,
            (p as isize, 1),
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    batch: usize,
    weight: &[T],
    out_channels: usize,
    g: &ConvGeom,
    grad_out: &[T],
    need_input: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let k = g.col_rows();
    let p = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    let mut dx = need_input.then(|| vec![T::zero(); input.len()]);
    let mut dw = need_params.then(|| vec![T::zero(); weight.len()]);
    let mut db = need_params.then(|| vec![T::zero(); out_channels]);
    let mut col = vec![T::zero(); if need_params { k * p } else { 0 }];
    let mut col_grad = vec![T::zero(); if need_input { k * p } else { 0 }];
    for n in 0..batch {
        let gout = &grad_out[n * out_channels * p..(n + 1) * out_channels * p];
        if let (Some(dw), Some(db)) = (dw.as_mut(), db.as_mut()) {
            for oc in 0..out_channels {
                let s: T = gout[oc * p..(oc + 1) * p].iter().copied().sum();
                db[oc] = db[oc] + s;
            }
            im2col(&input[n * in_len..(n + 1) * in_len], g, &mut col);
            // dW += dY · colᵀ
            T::gemm(
                out_channels,
                p,
                k,
                T::one(),
                gout,
                (p as isize, 1),
                &col,
                (1, p as isize),
                T::one(),
                dw,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ · dY
            T::gemm(
                k,
                out_channels,
                p,
                T::one(),
                weight,
                (1, k as isize),
                gout,
                (p as isize, 1),
                T::zero(),
                &mut col_grad,
                (p as isize, 1),
            );
            col2im_add(&col_grad, g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub(crate) fn max_pool2x2<T: Scalar>(
    input: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + (2 * oy) * w + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + w, i0 + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbour resampling of `[planes, h, w]` to `[planes, oh, ow]`.
/// Returns the source index for every output element.
pub(crate) fn nearest_indices(planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<usize> {
    let ys: Vec<usize> = (0..oh).map(|y| (y * h / oh).min(h - 1)).collect();
    let xs: Vec<usize> = (0..ow).map(|x| (x * w / ow).min(w - 1)).collect();
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        for &sy in &ys {
            for &sx in &xs {
                idx.push(pl * h * w + sy * w + sx);
            }
        }
    }
    idx
}

/// Source taps for a bilinear resize: sample `(y + 0.5) · h / oh - 0.5`,
/// clamped to the edge.
pub(crate) fn bilinear_taps(
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> (Vec<[usize; 4]>, Vec<[f64; 4]>) {
    let axis = |n: usize, on: usize| -> Vec<(usize, usize, f64)> {
        (0..on)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(h, oh), axis(w, ow));
    let mut index = Vec::with_capacity(planes * oh * ow);
    let mut weight = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                index.push([
                    base + y0 * w + x0,
                    base + y0 * w + x1,
                    base + y1 * w + x0,
                    base + y1 * w + x1,
                ]);
                weight.push([
                    (1.0 - fy) * (1.0 - fx),
                    (1.0 - fy) * fx,
                    fy * (1.0 - fx),
                    fy * fx,
                ]);
            }
        }
    }
    (index, weight)
}

/// `out[N, O] = x[N, I] · Wᵀ + b` with `W` stored as `[O, I]`.
pub(crate) fn dense_forward<T: Scalar>(
    x: &[T],
    n: usize,
    inputs: usize,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let outputs = bias.len();
    let mut out = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    T::gemm(
        n,
        inputs,
        outputs,
        T::one(),
        x,
        (inputs as isize, 1),
        weight,
        (1, inputs as isize),
        T::one(),
        &mut out,
        (outputs as isize, 1),
    );
    out
}

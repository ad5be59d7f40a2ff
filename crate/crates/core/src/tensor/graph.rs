use super::kernels::{self, ConvGeom};
use super::{check_shape, numel, ParamId, ParamStore, Result, Scalar, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 1,
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        geom: ConvGeom,
        batch: usize,
        out_channels: usize,
    },
    MaxPool2x2 {
        argmax: Vec<usize>,
    },
    Dense {
        rows: usize,
        inputs: usize,
    },
    Relu,
    Sigmoid,
    Softmax {
        cols: usize,
    },
    /// Output element i copies input element `index[i]` (nearest resampling).
    Gather {
        index: Vec<usize>,
    },
    /// Output element i is `Σ weight[i][k] · input[index[i][k]]`.
    Interp {
        index: Vec<[usize; 4]>,
        weight: Vec<[f64; 4]>,
    },
    Reshape,
    Concat {
        outer: usize,
        inner: Vec<usize>,
    },
    Add,
    Sub,
    Mul,
    Affine {
        scale: f64,
    },
    Ln,
    Clamp {
        lo: f64,
        hi: f64,
    },
    RowNorm {
        cols: usize,
    },
    Sum,
    Mean,
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<T>,
}

/// Tape of one forward pass. Nodes are appended in evaluation order, which
/// is a topological order; backward walks it in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode(id.0))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass with respect to `id`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<T>) -> Result<NodeId> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant leaf. Its gradient is still reported through [`Graph::grad`].
    pub fn input(&mut self, shape: &[usize], values: Vec<T>) -> Result<NodeId> {
        check_shape(shape)?;
        if values.len() != numel(shape) {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: values.len(),
                expected: numel(shape),
            });
        }
        self.push(Op::Input, vec![], shape.to_vec(), values)
    }

    /// Leaf bound to a parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<NodeId> {
        let t = store.get(id);
        self.push(Op::Param(id), vec![], t.shape().to_vec(), t.values().to_vec())
    }

    /// `x: [N, C, H, W]`, `weight: [OC, C, KH, KW]`, `bias: [OC]`.
    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: NodeId, spec: Conv2dSpec) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        let ws = self.node(weight)?.shape.clone();
        let bs = self.node(bias)?.shape.clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(mismatch(
                "conv2d",
                format!("input {xs:?} and weight {ws:?} must both be rank 4"),
            ));
        }
        if ws[1] != xs[1] {
            return Err(mismatch(
                "conv2d",
                format!("input has {} channels but weight expects {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(mismatch(
                "conv2d",
                format!("bias {bs:?} does not match {} output channels", ws[0]),
            ));
        }
        if spec.stride == 0 {
            return Err(mismatch("conv2d", "stride must be positive".into()));
        }
        let (h, w) = (xs[2] + 2 * spec.padding, xs[3] + 2 * spec.padding);
        if ws[2] > h || ws[3] > w {
            return Err(mismatch(
                "conv2d",
                format!("kernel {}x{} larger than padded input {h}x{w}", ws[2], ws[3]),
            ));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride: spec.stride,
            padding: spec.padding,
            out_h: (h - ws[2]) / spec.stride + 1,
            out_w: (w - ws[3]) / spec.stride + 1,
        };
        let value = kernels::conv2d_forward(
            &self.nodes[x.0].value,
            xs[0],
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
            ws[0],
            &geom,
        );
        let shape = vec![xs[0], ws[0], geom.out_h, geom.out_w];
        self.push(
            Op::Conv2d {
                geom,
                batch: xs[0],
                out_channels: ws[0],
            },
            vec![x.0, weight.0, bias.0],
            shape,
            value,
        )
    }

    /// 2×2 max pooling, stride 2, odd trailing rows/columns dropped.
    pub fn max_pool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(mismatch(
                "max_pool2x2",
                format!("need [N, C, H>=2, W>=2], got {xs:?}"),
            ));
        }
        let (value, argmax) =
            kernels::max_pool2x2(&self.nodes[x.0].value, xs[0] * xs[1], xs[2], xs[3]);
        self.push(
            Op::MaxPool2x2 { argmax },
            vec![x.0],
            vec![xs[0], xs[1], xs[2] / 2, xs[3] / 2],
            value,
        )
    }

    /// `x: [N, I]`, `weight: [O, I]`, `bias: [O]` → `[N, O]`.
    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        let ws = self.node(weight)?.shape.clone();
        let bs = self.node(bias)?.shape.clone();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch(
                "dense",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        if bs != [ws[0]] {
            return Err(mismatch(
                "dense",
                format!("bias {bs:?} does not match {} outputs", ws[0]),
            ));
        }
        let value = kernels::dense_forward(
            &self.nodes[x.0].value,
            xs[0],
            xs[1],
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        );
        self.push(
            Op::Dense {
                rows: xs[0],
                inputs: xs[1],
            },
            vec![x.0, weight.0, bias.0],
            vec![xs[0], ws[0]],
            value,
        )
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(T) -> T) -> Result<NodeId> {
        let n = self.node(x)?;
        let shape = n.shape.clone();
        let value = n.value.iter().map(|&v| f(v)).collect();
        self.push(op, vec![x.0], shape, value)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid, |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Ln, |v| v.ln())
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let (a, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(x, Op::Affine { scale }, move |v| a * v + b)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.affine(x, factor, 0.0)
    }

    /// Elementwise clamp into `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(x, Op::Clamp { lo, hi }, move |v| v.max(l).min(h))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        let shape = n.shape.clone();
        let cols = *shape.last().expect("shape is never empty");
        let mut value = n.value.clone();
        for row in value.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        self.push(Op::Softmax { cols }, vec![x.0], shape, value)
    }

    /// `[N, C, H, W]` → `[N, C, 2H, 2W]` by pixel replication.
    pub fn nearest_upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 4 {
            return Err(mismatch("nearest_upsample2x", format!("need rank 4, got {xs:?}")));
        }
        self.resize_nearest(x, xs[2] * 2, xs[3] * 2)
    }

    /// Nearest-neighbour resize of the two spatial axes to `out_h × out_w`.
    pub fn resize_nearest(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(mismatch(
                "resize_nearest",
                format!("need rank-4 input and positive target, got {xs:?} -> {out_h}x{out_w}"),
            ));
        }
        let index = kernels::nearest_indices(xs[0] * xs[1], xs[2], xs[3], out_h, out_w);
        let src = &self.nodes[x.0].value;
        let value = index.iter().map(|&i| src[i]).collect();
        self.push(
            Op::Gather { index },
            vec![x.0],
            vec![xs[0], xs[1], out_h, out_w],
            value,
        )
    }

    /// Bilinear resize of the two spatial axes with half-pixel sample centres.
    pub fn resize_bilinear(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(mismatch(
                "resize_bilinear",
                format!("need rank-4 input and positive target, got {xs:?} -> {out_h}x{out_w}"),
            ));
        }
        let (index, weight) = kernels::bilinear_taps(xs[0] * xs[1], xs[2], xs[3], out_h, out_w);
        let src = &self.nodes[x.0].value;
        let value = index
            .iter()
            .zip(&weight)
            .map(|(i, w)| {
                (0..4).fold(T::zero(), |acc, k| acc + T::from_f64_lossy(w[k]) * src[i[k]])
            })
            .collect();
        self.push(
            Op::Interp { index, weight },
            vec![x.0],
            vec![xs[0], xs[1], out_h, out_w],
            value,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        check_shape(shape)?;
        let n = self.node(x)?;
        if numel(shape) != n.value.len() {
            return Err(mismatch(
                "reshape",
                format!("cannot view {:?} as {shape:?}", n.shape),
            ));
        }
        let value = n.value.clone();
        self.push(Op::Reshape, vec![x.0], shape.to_vec(), value)
    }

    /// `[N, ...]` → `[N, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.node(x)?.shape.clone();
        let rest = numel(&xs[1..]).max(1);
        self.reshape(x, &[xs[0], rest])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let s0 = self.node(*first)?.shape.clone();
        if axis >= s0.len() {
            return Err(mismatch("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = 0;
        let mut inner = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = &self.node(p)?.shape;
            let same_rank = s.len() == s0.len();
            let others_match = same_rank
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !others_match {
                return Err(mismatch(
                    "concat",
                    format!("{s:?} does not match {s0:?} outside axis {axis}"),
                ));
            }
            out_shape[axis] += s[axis];
            inner.push(numel(&s[axis..]));
        }
        let outer = numel(&s0[..axis]);
        let mut value = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&inner) {
                value.extend_from_slice(&self.nodes[p.0].value[o * len..(o + 1) * len]);
            }
        }
        self.push(
            Op::Concat { outer, inner },
            parts.iter().map(|p| p.0).collect(),
            out_shape,
            value,
        )
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, name: &'static str, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape != nb.shape {
            return Err(mismatch(name, format!("{:?} vs {:?}", na.shape, nb.shape)));
        }
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        self.push(op, vec![a.0, b.0], shape, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    /// Euclidean norm of every row of a `[R, C]` tensor → `[R]`.
    pub fn row_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.shape.len() != 2 {
            return Err(mismatch("row_norm", format!("need rank 2, got {:?}", n.shape)));
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        let value = n
            .value
            .chunks(cols)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        self.push(Op::RowNorm { cols }, vec![x.0], vec![rows], value)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.node(x)?.value.iter().copied().sum();
        self.push(Op::Sum, vec![x.0], vec![1], vec![s])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        let count = T::from_usize(n.value.len()).expect("count fits");
        let s = n.value.iter().copied().sum::<T>() / count;
        self.push(Op::Mean, vec![x.0], vec![1], vec![s])
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// `store`; every node's gradient stays readable through [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        self.sweep(loss, store, false)
    }

    /// Like [`Graph::backward`] but only computes what unfrozen parameters
    /// need: inputs, frozen parameters and everything upstream of them alone
    /// get no gradient.
    pub fn backward_trainable(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        self.sweep(loss, store, true)
    }

    fn sweep(&mut self, loss: NodeId, store: &mut ParamStore<T>, prune: bool) -> Result<()> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let shape = &self.node(loss)?.shape;
        if numel(shape) != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        self.consumed = true;
        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = match node.op {
                Op::Input => !prune,
                Op::Param(pid) => !prune || !store.get(pid).is_frozen(),
                _ => node.inputs.iter().any(|&j| needs[j]),
            };
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !needs[i] {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let wanted: Vec<bool> = node.inputs.iter().map(|&j| needs[j]).collect();
            let contributions = self.input_grads(node, &g, &wanted);
            if let Op::Param(pid) = node.op {
                store.get_mut(pid).accumulate_grad(&g);
            }
            for ((input, delta), want) in node.inputs.iter().zip(contributions).zip(wanted) {
                let Some(delta) = delta.filter(|_| want) else { continue };
                match &mut grads[*input] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a = *a + *d),
                    slot @ None => *slot = Some(delta),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient contribution for each input; `want[k]` false lets expensive
    /// ops skip input `k`.
    fn input_grads(&self, node: &Node<T>, g: &[T], want: &[bool]) -> Vec<Option<Vec<T>>> {
        let val = |k: usize| &self.nodes[node.inputs[k]].value;
        match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d {
                geom,
                batch,
                out_channels,
            } => {
                let gr = kernels::conv2d_backward(
                    val(0),
                    *batch,
                    val(1),
                    *out_channels,
                    geom,
                    g,
                    want[0],
                    want[1] || want[2],
                );
                vec![gr.input, gr.weight, gr.bias]
            }
            Op::MaxPool2x2 { argmax } | Op::Gather { index: argmax } => {
                let mut dx = vec![T::zero(); val(0).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                vec![Some(dx)]
            }
            Op::Interp { index, weight } => {
                let mut dx = vec![T::zero(); val(0).len()];
                for ((i, w), &gv) in index.iter().zip(weight).zip(g) {
                    for k in 0..4 {
                        dx[i[k]] = dx[i[k]] + T::from_f64_lossy(w[k]) * gv;
                    }
                }
                vec![Some(dx)]
            }
            Op::Dense { rows, inputs } => {
                let (x, w) = (val(0), val(1));
                let outputs = node.shape[1];
                let dx = want[0].then(|| {
                    // dX = dY · W
                    let mut dx = vec![T::zero(); x.len()];
                    T::gemm(
                        *rows,
                        outputs,
                        *inputs,
                        T::one(),
                        g,
                        (outputs as isize, 1),
                        w,
                        (*inputs as isize, 1),
                        T::zero(),
                        &mut dx,
                        (*inputs as isize, 1),
                    );
                    dx
                });
                let dw = want[1].then(|| {
                    // dW = dYᵀ · X
                    let mut dw = vec![T::zero(); w.len()];
                    T::gemm(
                        outputs,
                        *rows,
                        *inputs,
                        T::one(),
                        g,
                        (1, outputs as isize),
                        x,
                        (*inputs as isize, 1),
                        T::zero(),
                        &mut dw,
                        (*inputs as isize, 1),
                    );
                    dw
                });
                let mut db = vec![T::zero(); outputs];
                for row in g.chunks(outputs) {
                    db.iter_mut().zip(row).for_each(|(b, v)| *b = *b + *v);
                }
                vec![dx, dw, Some(db)]
            }
            Op::Relu => {
                let dx = val(0)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![Some(dx)]
            }
            Op::Sigmoid => {
                let dx = node
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                vec![Some(dx)]
            }
            Op::Softmax { cols } => {
                let mut dx = Vec::with_capacity(g.len());
                for (y, gr) in node.value.chunks(*cols).zip(g.chunks(*cols)) {
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(y.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                }
                vec![Some(dx)]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Concat { outer, inner } => {
                let mut out: Vec<Vec<T>> = inner.iter().map(|&len| Vec::with_capacity(len * outer)).collect();
                let stride: usize = inner.iter().sum();
                for o in 0..*outer {
                    let mut off = o * stride;
                    for (dst, &len) in out.iter_mut().zip(inner) {
                        dst.extend_from_slice(&g[off..off + len]);
                        off += len;
                    }
                }
                out.into_iter().map(Some).collect()
            }
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                let da = g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect();
                let db = g.iter().zip(a).map(|(&gv, &av)| gv * av).collect();
                vec![Some(da), Some(db)]
            }
            Op::Affine { scale } => {
                let s = T::from_f64_lossy(*scale);
                vec![Some(g.iter().map(|&v| v * s).collect())]
            }
            Op::Ln => vec![Some(val(0).iter().zip(g).map(|(&x, &gv)| gv / x).collect())],
            Op::Clamp { lo, hi } => {
                let (l, h) = (T::from_f64_lossy(*lo), T::from_f64_lossy(*hi));
                let dx = val(0)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x < l || x > h { T::zero() } else { gv })
                    .collect();
                vec![Some(dx)]
            }
            Op::RowNorm { cols } => {
                let mut dx = Vec::with_capacity(val(0).len());
                for ((row, &norm), &gv) in val(0).chunks(*cols).zip(&node.value).zip(g) {
                    if norm > T::zero() {
                        dx.extend(row.iter().map(|&x| gv * x / norm));
                    } else {
                        dx.extend(std::iter::repeat(T::zero()).take(*cols));
                    }
                }
                vec![Some(dx)]
            }
            Op::Sum => vec![Some(vec![g[0]; val(0).len()])],
            Op::Mean => {
                let n = T::from_usize(val(0).len()).expect("count fits");
                vec![Some(vec![g[0] / n; val(0).len()])]
            }
        }
    }
}

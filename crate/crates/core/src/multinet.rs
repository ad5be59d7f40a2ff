//! Branched multi-objective network: a shared convolutional trunk feeding a
//! mask decoder and three dense heads (joint coordinates, base coordinates,
//! robot type). Every layer carries a [`LayerGroup`] tag used by staged
//! transfer learning.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{read_mask, read_rgb, Dataset, RobotModel, Sample, SampleRecord, SceneError, Split};
use crate::tensor::{Conv2dSpec, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Descriptor(String),
    #[error("input has {got} values, network expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("expected a 3-channel image, got {0} channels")]
    ChannelCount(usize),
    #[error("class list must be non-empty and unique: {0:?}")]
    Classes(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

type Result<T> = std::result::Result<T, NetError>;

/// Training-stage group of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    /// Never updated during transfer.
    TrunkFrozen,
    /// Updated in the second transfer stage.
    Stage2Unlockable,
    /// Updated in both transfer stages.
    Stage1Trainable,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 3] = [Self::TrunkFrozen, Self::Stage2Unlockable, Self::Stage1Trainable];
}

/// Network input size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub width: usize,
    pub height: usize,
}

impl InputSize {
    pub const DESK: InputSize = InputSize { width: 128, height: 106 };
    pub const PAPER: InputSize = InputSize { width: 256, height: 212 };

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub tag: LayerGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub width: usize,
    pub tag: LayerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    pub input: InputSize,
    /// Conv + relu + 2×2 max-pool blocks.
    pub trunk: Vec<ConvLayer>,
    /// Conv + relu at trunk resolution.
    pub mask_convs: Vec<ConvLayer>,
    /// 2× nearest upsample, then conv + relu.
    pub mask_up: Vec<ConvLayer>,
    /// Single-channel conv followed by a sigmoid and a resize to the input size.
    pub mask_head: ConvLayer,
    /// Hidden layer of each dense branch (one per branch, same spec).
    pub head_hidden: DenseLayer,
    pub head_tag: LayerGroup,
    pub max_joints: usize,
    /// Constant added to every predicted 3D point (meters, camera frame), so
    /// that zero-initialised heads start at a typical working distance.
    pub coord_offset: [f64; 3],
}

impl Default for ArchitectureDescriptor {
    fn default() -> Self {
        Self::desk(InputSize::DESK)
    }
}

impl ArchitectureDescriptor {
    pub fn desk(input: InputSize) -> Self {
        use LayerGroup::*;
        let conv = |out_channels, tag| ConvLayer {
            out_channels,
            kernel: 3,
            tag,
        };
        Self {
            input,
            trunk: vec![
                conv(8, TrunkFrozen),
                conv(16, TrunkFrozen),
                conv(32, TrunkFrozen),
                conv(32, Stage2Unlockable),
            ],
            mask_convs: vec![conv(32, Stage2Unlockable), conv(32, Stage2Unlockable)],
            mask_up: vec![conv(16, Stage2Unlockable), conv(8, Stage2Unlockable)],
            mask_head: conv(1, Stage1Trainable),
            head_hidden: DenseLayer {
                width: 128,
                tag: Stage2Unlockable,
            },
            head_tag: Stage1Trainable,
            max_joints: 7,
            coord_offset: [0.0, 0.0, 1.8],
        }
    }

    /// Spatial size after the trunk, `(height, width)`.
    pub fn trunk_output(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.input.height, self.input.width);
        for _ in &self.trunk {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    pub fn trunk_channels(&self) -> usize {
        self.trunk.last().map_or(3, |l| l.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Descriptor(m));
        if self.input.width == 0 || self.input.height == 0 {
            return bad("input size must be positive".into());
        }
        if self.trunk.is_empty() {
            return bad("trunk needs at least one block".into());
        }
        let (h, w) = self.trunk_output();
        if h == 0 || w == 0 {
            return bad(format!(
                "{} pooling blocks collapse a {}x{} input",
                self.trunk.len(),
                self.input.width,
                self.input.height
            ));
        }
        if self.mask_head.out_channels != 1 {
            return bad("mask head must have one output channel".into());
        }
        if self.max_joints != 7 {
            return bad(format!("joint head needs 7 slots, got {}", self.max_joints));
        }
        let convs = self
            .trunk
            .iter()
            .chain(&self.mask_convs)
            .chain(&self.mask_up)
            .chain(std::iter::once(&self.mask_head));
        for c in convs {
            if c.kernel % 2 == 0 || c.out_channels == 0 {
                return bad(format!("conv layers need an odd kernel and channels: {c:?}"));
            }
        }
        if self.head_hidden.width == 0 {
            return bad("dense hidden width must be positive".into());
        }
        Ok(())
    }

    /// Every parameterised layer in build order.
    pub fn layers(&self, num_classes: usize) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut ch = 3;
        for (i, l) in self.trunk.iter().enumerate() {
            out.push(LayerSpec::conv(format!("trunk.{i}"), ch, l));
            ch = l.out_channels;
        }
        let trunk_ch = ch;
        for (i, l) in self.mask_convs.iter().enumerate() {
            out.push(LayerSpec::conv(format!("mask.conv{i}"), ch, l));
            ch = l.out_channels;
        }
        for (i, l) in self.mask_up.iter().enumerate() {
            out.push(LayerSpec::conv(format!("mask.up{i}"), ch, l));
            ch = l.out_channels;
        }
        out.push(LayerSpec::conv("mask.head".into(), ch, &self.mask_head));
        let (h, w) = self.trunk_output();
        let flat = trunk_ch * h * w;
        let hidden = self.head_hidden.width;
        for (branch, outputs) in [("joints", self.max_joints * 3), ("base", 3), ("type", num_classes)] {
            out.push(LayerSpec {
                name: format!("{branch}.hidden"),
                kind: LayerKind::Dense { inputs: flat, outputs: hidden },
                tag: self.head_hidden.tag,
            });
            out.push(LayerSpec {
                name: format!("{branch}.head"),
                kind: LayerKind::Dense { inputs: hidden, outputs },
                tag: self.head_tag,
            });
        }
        out
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, num_classes: usize) -> usize {
        self.layers(num_classes).iter().map(|l| l.kind.param_count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { in_channels: usize, out_channels: usize, kernel: usize },
    Dense { inputs: usize, outputs: usize },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Self::Conv { in_channels, out_channels, kernel } => vec![out_channels, in_channels, kernel, kernel],
            Self::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Self::Conv { out_channels, .. } => out_channels,
            Self::Dense { outputs, .. } => outputs,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Self::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
            Self::Dense { inputs, .. } => inputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.outputs() * self.fan_in() + self.outputs()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub tag: LayerGroup,
}

impl LayerSpec {
    fn conv(name: String, in_channels: usize, l: &ConvLayer) -> Self {
        Self {
            name,
            kind: LayerKind::Conv {
                in_channels,
                out_channels: l.out_channels,
                kernel: l.kernel,
            },
            tag: l.tag,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    weight: ParamId,
    bias: ParamId,
}

/// He-uniform weights, zero biases.
fn he_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Vec<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit))).collect()
}

/// Parameters plus the architecture and class list they were built for.
#[derive(Debug, Clone)]
pub struct Network<T> {
    descriptor: ArchitectureDescriptor,
    classes: Vec<String>,
    params: ParamStore<T>,
    specs: Vec<LayerSpec>,
    layers: Vec<LayerParams>,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    /// `[N, 1, H, W]` probabilities.
    pub mask_probs: NodeId,
    /// `[N, 3 * max_joints]`, meters, camera frame.
    pub joints: NodeId,
    /// `[N, 3]`.
    pub base: NodeId,
    /// `[N, R]` softmax.
    pub type_probs: NodeId,
    /// `[N, C, h, w]` trunk features.
    pub trunk: NodeId,
}

/// Per-sample network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs {
    /// Row-major `H × W`.
    pub mask_prob: Vec<f64>,
    pub joints_est: Vec<[f64; 3]>,
    pub base_est: [f64; 3],
    pub type_dist: Vec<f64>,
}

impl NetworkOutputs {
    pub fn predicted_class(&self) -> usize {
        self.type_dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

/// The first `n_joints` slots of the joint head.
pub fn select_joint_outputs(joints_est: &[[f64; 3]], n_joints: usize) -> &[[f64; 3]] {
    &joints_est[..n_joints.min(joints_est.len())]
}

fn check_classes(classes: &[String]) -> Result<()> {
    let mut sorted = classes.to_vec();
    sorted.sort();
    sorted.dedup();
    if classes.is_empty() || sorted.len() != classes.len() {
        return Err(NetError::Classes(classes.to_vec()));
    }
    Ok(())
}

impl<T: Scalar> Network<T> {
    pub fn build(descriptor: ArchitectureDescriptor, classes: Vec<String>, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        check_classes(&classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = descriptor.layers(classes.len());
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(specs.len());
        for s in &specs {
            let shape = s.kind.weight_shape();
            let w = he_uniform::<T, _>(&mut rng, &shape, s.kind.fan_in());
            let weight = params.insert(format!("{}.weight", s.name), Tensor::from_vec(&shape, w)?);
            let bias = params.insert(format!("{}.bias", s.name), Tensor::zeros(&[s.kind.outputs()])?);
            layers.push(LayerParams { weight, bias });
        }
        Ok(Self {
            descriptor,
            classes,
            params,
            specs,
            layers,
        })
    }

    /// Reassembles a network from named tensors (used by checkpoint loading).
    pub fn from_parts(
        descriptor: ArchitectureDescriptor,
        classes: Vec<String>,
        mut tensors: Vec<(String, Tensor<T>)>,
    ) -> Result<Self> {
        let mut net = Self::build(descriptor, classes, 0)?;
        if tensors.len() != net.params.len() {
            return Err(NetError::Descriptor(format!(
                "expected {} tensors, got {}",
                net.params.len(),
                tensors.len()
            )));
        }
        for (id, (name, t)) in net.params.ids().collect::<Vec<_>>().into_iter().zip(tensors.drain(..)) {
            let want = net.params.get(id);
            if net.params.name(id) != name || want.shape() != t.shape() {
                return Err(NetError::Descriptor(format!(
                    "tensor `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    net.params.name(id),
                    want.shape()
                )));
            }
            net.params.replace(id, t);
        }
        Ok(net)
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Group of every parameter tensor, in store order.
    pub fn param_groups(&self) -> Vec<(ParamId, LayerGroup)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (l, s) in self.layers.iter().zip(&self.specs) {
            out.push((l.weight, s.tag));
            out.push((l.bias, s.tag));
        }
        out
    }

    pub fn group_of(&self, id: ParamId) -> Option<LayerGroup> {
        self.param_groups().into_iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Marks every tensor whose group is not in `trainable` as frozen.
    pub fn set_trainable_groups(&mut self, trainable: &[LayerGroup]) {
        for (id, g) in self.param_groups() {
            self.params.get_mut(id).set_frozen(!trainable.contains(&g));
        }
    }

    pub fn input_len(&self) -> usize {
        3 * self.descriptor.input.pixels()
    }

    /// Records a forward pass of `x: [N, 3, H, W]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<HeadNodes> {
        let d = &self.descriptor;
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [3, d.input.height, d.input.width] {
            return Err(NetError::InputSize {
                expected: self.input_len(),
                got: xs[1..].iter().product(),
            });
        }
        let batch = xs[0];
        let mut layer = 0usize;
        let mut next = |g: &mut Graph<T>| -> Result<(NodeId, NodeId)> {
            let l = self.layers[layer];
            layer += 1;
            Ok((g.param(&self.params, l.weight)?, g.param(&self.params, l.bias)?))
        };
        let conv = |g: &mut Graph<T>, h: NodeId, w: NodeId, b: NodeId, k: usize| -> Result<NodeId> {
            let spec = Conv2dSpec {
                stride: 1,
                padding: k / 2,
            };
            Ok(g.conv2d(h, w, b, spec)?)
        };

        let mut h = x;
        for l in &d.trunk {
            let (w, b) = next(g)?;
            h = conv(g, h, w, b, l.kernel)?;
            h = g.relu(h)?;
            h = g.max_pool2x2(h)?;
        }
        let trunk = h;

        let mut m = trunk;
        for l in &d.mask_convs {
            let (w, b) = next(g)?;
            m = conv(g, m, w, b, l.kernel)?;
            m = g.relu(m)?;
        }
        for l in &d.mask_up {
            let (w, b) = next(g)?;
            m = g.nearest_upsample2x(m)?;
            m = conv(g, m, w, b, l.kernel)?;
            m = g.relu(m)?;
        }
        let (w, b) = next(g)?;
        m = conv(g, m, w, b, d.mask_head.kernel)?;
        m = g.resize_bilinear(m, d.input.height, d.input.width)?;
        let mask_probs = g.sigmoid(m)?;

        let flat = g.flatten(trunk)?;
        let mut heads = [flat; 3];
        for head in heads.iter_mut() {
            let (w, b) = next(g)?;
            let hid = g.dense(flat, w, b)?;
            let hid = g.relu(hid)?;
            let (w, b) = next(g)?;
            *head = g.dense(hid, w, b)?;
        }
        let [joints, base, type_logits] = heads;
        let joints = self.offset_points(g, joints, batch * d.max_joints)?;
        let base = self.offset_points(g, base, batch)?;
        let type_probs = g.softmax(type_logits)?;
        debug_assert_eq!(g.shape(joints), [batch, 3 * d.max_joints]);
        Ok(HeadNodes {
            mask_probs,
            joints,
            base,
            type_probs,
            trunk,
        })
    }

    fn offset_points(&self, g: &mut Graph<T>, x: NodeId, points: usize) -> Result<NodeId> {
        let o = self.descriptor.coord_offset;
        if o == [0.0; 3] {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let offset: Vec<T> = (0..points).flat_map(|_| o.map(T::from_f64_lossy)).collect();
        let c = g.input(&shape, offset)?;
        Ok(g.add(x, c)?)
    }

    /// Inference on a batch of preprocessed `[3, H, W]` inputs.
    pub fn forward(&self, inputs: &[&[T]]) -> Result<Vec<NetworkOutputs>> {
        let n = self.input_len();
        let mut data = Vec::with_capacity(n * inputs.len());
        for x in inputs {
            if x.len() != n {
                return Err(NetError::InputSize { expected: n, got: x.len() });
            }
            data.extend_from_slice(x);
        }
        let d = &self.descriptor;
        let mut g = Graph::new();
        let x = g.input(&[inputs.len(), 3, d.input.height, d.input.width], data)?;
        let h = self.forward_graph(&mut g, x)?;
        Ok(outputs_from_graph(&g, &h, d, self.classes.len()))
    }

    /// Resizes the type head to `classes`, mapping rows by class name. Rows
    /// of known classes are kept, new rows are freshly initialised.
    pub fn with_classes(mut self, classes: Vec<String>, seed: u64) -> Result<Self> {
        check_classes(&classes)?;
        let li = self
            .specs
            .iter()
            .position(|s| s.name == "type.head")
            .expect("type head exists");
        let LayerKind::Dense { inputs, .. } = self.specs[li].kind else {
            unreachable!("type head is dense")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let old_w = self.params.get(self.layers[li].weight).values().to_vec();
        let old_b = self.params.get(self.layers[li].bias).values().to_vec();
        let mut w = Vec::with_capacity(classes.len() * inputs);
        let mut b = Vec::with_capacity(classes.len());
        for c in &classes {
            match self.classes.iter().position(|o| o == c) {
                Some(r) => {
                    w.extend_from_slice(&old_w[r * inputs..(r + 1) * inputs]);
                    b.push(old_b[r]);
                }
                None => {
                    w.extend(he_uniform::<T, _>(&mut rng, &[inputs], inputs));
                    b.push(T::zero());
                }
            }
        }
        let kind = LayerKind::Dense {
            inputs,
            outputs: classes.len(),
        };
        self.specs[li].kind = kind;
        let (wid, bid) = (self.layers[li].weight, self.layers[li].bias);
        self.params.replace(wid, Tensor::from_vec(&kind.weight_shape(), w)?);
        self.params.replace(bid, Tensor::from_vec(&[classes.len()], b)?);
        self.classes = classes;
        Ok(self)
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let tensors = self
            .params
            .iter()
            .map(|(_, name, t)| {
                let v = t.values().iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect();
                (name.to_owned(), Tensor::from_vec(t.shape(), v).expect("same shape"))
            })
            .collect();
        Network::from_parts(self.descriptor.clone(), self.classes.clone(), tensors).expect("same architecture")
    }
}

/// Reads per-sample outputs off a recorded forward pass.
pub fn outputs_from_graph<T: Scalar>(
    g: &Graph<T>,
    h: &HeadNodes,
    d: &ArchitectureDescriptor,
    num_classes: usize,
) -> Vec<NetworkOutputs> {
    let f = |v: &T| v.to_f64().unwrap_or(f64::NAN);
    let pixels = d.input.pixels();
    let batch = g.shape(h.joints)[0];
    let (mask, joints, base, probs) = (
        g.value(h.mask_probs),
        g.value(h.joints),
        g.value(h.base),
        g.value(h.type_probs),
    );
    let eps = crate::objectives::PROB_EPS;
    (0..batch)
        .map(|i| NetworkOutputs {
            mask_prob: mask[i * pixels..(i + 1) * pixels]
                .iter()
                .map(|v| f(v).clamp(eps, 1.0 - eps))
                .collect(),
            joints_est: joints[i * 3 * d.max_joints..(i + 1) * 3 * d.max_joints]
                .chunks(3)
                .map(|c| [f(&c[0]), f(&c[1]), f(&c[2])])
                .collect(),
            base_est: [f(&base[i * 3]), f(&base[i * 3 + 1]), f(&base[i * 3 + 2])],
            type_dist: probs[i * num_classes..(i + 1) * num_classes].iter().map(f).collect(),
        })
        .collect()
}

/// Source-to-crop mapping shared by image and mask preprocessing: uniform
/// scale so the target is covered, then a centred crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropMap {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl CropMap {
    pub fn new(src_w: usize, src_h: usize, size: InputSize) -> Self {
        let scale = (size.width as f64 / src_w as f64).max(size.height as f64 / src_h as f64);
        let scaled_w = (src_w as f64 * scale).round();
        let scaled_h = (src_h as f64 * scale).round();
        Self {
            scale,
            offset_x: ((scaled_w - size.width as f64) / 2.0).floor(),
            offset_y: ((scaled_h - size.height as f64) / 2.0).floor(),
        }
    }

    /// Source coordinate (in pixel-centre convention) of an output pixel.
    fn source(&self, col: usize, row: usize) -> (f64, f64) {
        (
            (col as f64 + self.offset_x + 0.5) / self.scale - 0.5,
            (row as f64 + self.offset_y + 0.5) / self.scale - 0.5,
        )
    }

    /// Maps a source pixel coordinate into the output grid.
    pub fn to_output(&self, u: f64, v: f64) -> (f64, f64) {
        (u * self.scale - self.offset_x, v * self.scale - self.offset_y)
    }
}

fn bilinear(data: &[u8], w: usize, h: usize, channels: usize, c: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| f64::from(data[(yy * w + xx) * channels + c]);
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Interleaved 8-bit pixels → `[3, H, W]` in `[0, 1]`.
pub fn preprocess_raw<T: Scalar>(
    data: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    size: InputSize,
) -> Result<Vec<T>> {
    if channels != 3 {
        return Err(NetError::ChannelCount(channels));
    }
    if data.len() != width * height * 3 || width == 0 || height == 0 {
        return Err(NetError::InputSize {
            expected: width * height * 3,
            got: data.len(),
        });
    }
    let map = CropMap::new(width, height, size);
    let mut out = vec![T::zero(); 3 * size.pixels()];
    for row in 0..size.height {
        for col in 0..size.width {
            let (x, y) = map.source(col, row);
            for c in 0..3 {
                let v = bilinear(data, width, height, 3, c, x, y) / 255.0;
                out[(c * size.height + row) * size.width + col] = T::from_f64_lossy(v);
            }
        }
    }
    Ok(out)
}

pub fn preprocess<T: Scalar>(image: &RgbImage, size: InputSize) -> Result<Vec<T>> {
    preprocess_raw(image.as_raw(), image.width() as usize, image.height() as usize, 3, size)
}

/// Resamples a 0/1 mask onto the network grid; a pixel is foreground when
/// its interpolated value is at least one half.
pub fn preprocess_mask(mask: &[u8], width: usize, height: usize, size: InputSize) -> Vec<u8> {
    let map = CropMap::new(width, height, size);
    let scaled: Vec<u8> = mask.iter().map(|&v| v.min(1) * 255).collect();
    let mut out = vec![0u8; size.pixels()];
    for row in 0..size.height {
        for col in 0..size.width {
            let (x, y) = map.source(col, row);
            out[row * size.width + col] = u8::from(bilinear(&scaled, width, height, 1, 0, x, y) >= 127.5);
        }
    }
    out
}

/// A sample on the network grid together with its training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: usize,
    pub robot: String,
    pub family: String,
    /// Robot reach in meters.
    pub reach: f64,
    pub split: Split,
    /// `[3, H, W]` in `[0, 1]`.
    pub input: Vec<f32>,
    /// `H × W` of 0/1.
    pub mask: Vec<u8>,
    /// Camera-frame joint positions, one per joint.
    pub joints: Vec<[f64; 3]>,
    pub base: [f64; 3],
    pub distance: f64,
}

impl PreparedSample {
    pub fn from_sample(s: &Sample, model: &RobotModel, split: Split, size: InputSize) -> Result<Self> {
        let input = preprocess(&s.image, size)?;
        let mask = preprocess_mask(&s.mask.data, s.mask.width, s.mask.height, size);
        Ok(Self {
            id: s.id,
            robot: model.name.clone(),
            family: model.family.clone(),
            reach: model.reach,
            split,
            input,
            mask,
            joints: s.joint_coords_cam.iter().map(|p| [p.x, p.y, p.z]).collect(),
            base: [s.base_coords_cam.x, s.base_coords_cam.y, s.base_coords_cam.z],
            distance: s.camera_distance,
        })
    }

    /// Loads one manifest record from a dataset directory.
    pub fn load(
        dir: &std::path::Path,
        dataset: &Dataset,
        rec: &SampleRecord,
        models: &[RobotModel],
        size: InputSize,
    ) -> Result<Self> {
        let name = dataset.classes.get(rec.robot_type).ok_or_else(|| {
            NetError::Descriptor(format!("sample {} has unknown class {}", rec.id, rec.robot_type))
        })?;
        let model = models.iter().find(|m| &m.name == name).ok_or_else(|| SceneError::UnknownRobot {
            name: name.clone(),
            catalog: models.iter().map(|m| m.name.clone()).collect(),
        })?;
        let image = read_rgb(&dir.join(&rec.image))?;
        let mask = read_mask(&dir.join(&rec.mask))?;
        Ok(Self {
            id: rec.id,
            robot: model.name.clone(),
            family: model.family.clone(),
            reach: model.reach,
            split: rec.split,
            input: preprocess(&image, size)?,
            mask: preprocess_mask(&mask.data, mask.width, mask.height, size),
            joints: rec.joints_cam.clone(),
            base: rec.base_cam,
            distance: rec.distance,
        })
    }

    pub fn fg_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&v| v != 0).count() as f64 / self.mask.len().max(1) as f64
    }
}

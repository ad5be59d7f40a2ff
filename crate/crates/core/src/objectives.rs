//! The four training objectives (mask, joint coordinates, base coordinates,
//! robot type) and their weighted sum.
//!
//! Every loss exists twice: as a plain `f64` function used by evaluators and
//! tests, and as a graph builder used during training.

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, NodeId, Scalar, TensorError};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("foreground fraction {0} must lie strictly between 0 and 1")]
    DegenerateFraction(f64),
    #[error("no masks given")]
    NoMasks,
    #[error("{what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("type target is not one-hot: {0:?}")]
    NotOneHot(Vec<f64>),
    #[error("loss component `{name}` is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ObjectiveError>;

/// Inverse-probability class weights for the mask objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_fg: f64,
    pub w_bg: f64,
    pub p_fg: f64,
}

impl ClassWeights {
    pub fn from_fraction(p_fg: f64) -> Result<Self> {
        if !(p_fg > 0.0 && p_fg < 1.0) {
            return Err(ObjectiveError::DegenerateFraction(p_fg));
        }
        Ok(Self {
            w_fg: 1.0 / p_fg,
            w_bg: 1.0 / (1.0 - p_fg),
            p_fg,
        })
    }

    /// Pooled over every pixel of every mask (masks are 0/1 bytes).
    pub fn from_masks<'a, I>(masks: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let (mut fg, mut total) = (0usize, 0usize);
        for m in masks {
            fg += m.iter().filter(|&&v| v != 0).count();
            total += m.len();
        }
        if total == 0 {
            return Err(ObjectiveError::NoMasks);
        }
        Self::from_fraction(fg as f64 / total as f64)
    }
}

/// Where the class weights are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    /// Once over the whole training split.
    #[default]
    Dataset,
    /// Separately for every image; images that are all one class fall back
    /// to the dataset weights.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub jcoords: f64,
    pub bcoords: f64,
    #[serde(rename = "type")]
    pub type_: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 1.2,
            jcoords: 1.2,
            bcoords: 1.2,
            type_: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mask: f64,
    pub jcoords: f64,
    pub bcoords: f64,
    #[serde(rename = "type")]
    pub type_: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

pub fn pixel_loss(i_est: f64, i_gt: f64, w: &ClassWeights) -> f64 {
    let p = i_est.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -w.w_fg * i_gt * p.ln() - w.w_bg * (1.0 - i_gt) * (1.0 - p).ln()
}

pub fn mask_loss(est: &[f64], gt: &[u8], w: &ClassWeights) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(ObjectiveError::LengthMismatch {
            what: "mask_loss",
            left: est.len(),
            right: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(ObjectiveError::NoMasks);
    }
    let total: f64 = est
        .iter()
        .zip(gt)
        .map(|(&e, &g)| pixel_loss(e, f64::from(g.min(1)), w))
        .sum();
    Ok(total / est.len() as f64)
}

pub fn joint_coords_loss(gt: &[[f64; 3]], est: &[[f64; 3]]) -> Result<f64> {
    if gt.len() != est.len() || gt.is_empty() {
        return Err(ObjectiveError::LengthMismatch {
            what: "joint_coords_loss",
            left: gt.len(),
            right: est.len(),
        });
    }
    let total: f64 = gt.iter().zip(est).map(|(a, b)| dist(a, b)).sum();
    Ok(total / gt.len() as f64)
}

pub fn base_coords_loss(gt: &[f64; 3], est: &[f64; 3]) -> f64 {
    dist(gt, est)
}

pub fn type_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(ObjectiveError::LengthMismatch {
            what: "type_loss",
            left: p.len(),
            right: q.len(),
        });
    }
    let ones = p.iter().filter(|&&v| v == 1.0).count();
    let zeros = p.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != p.len() {
        return Err(ObjectiveError::NotOneHot(p.to_vec()));
    }
    Ok(p
        .iter()
        .zip(q)
        .map(|(&pc, &qc)| -pc * qc.clamp(PROB_EPS, 1.0).ln())
        .sum())
}

/// Combines the four components. `final` is the weighted sum.
pub fn final_loss(mask: f64, jcoords: f64, bcoords: f64, type_: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, value) in [("mask", mask), ("jcoords", jcoords), ("bcoords", bcoords), ("type", type_)] {
        if !value.is_finite() {
            return Err(ObjectiveError::NonFinite { name, value });
        }
    }
    Ok(LossBreakdown {
        mask,
        jcoords,
        bcoords,
        type_,
        final_: w.mask * mask + w.jcoords * jcoords + w.bcoords * bcoords + w.type_ * type_,
    })
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub stage: String,
    pub mask: f64,
    pub jcoords: f64,
    pub bcoords: f64,
    #[serde(rename = "type")]
    pub type_: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub lr: f64,
}

impl LogRecord {
    pub fn new(iter: usize, stage: &str, b: &LossBreakdown, lr: f64) -> Self {
        Self {
            iter,
            stage: stage.to_owned(),
            mask: b.mask,
            jcoords: b.jcoords,
            bcoords: b.bcoords,
            type_: b.type_,
            final_: b.final_,
            lr,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Ground truth for a batch, laid out to match the network outputs.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    pub batch: usize,
    /// `[N, 1, H, W]` of 0/1.
    pub mask: Vec<u8>,
    pub mask_hw: (usize, usize),
    /// Per-sample class weights; all equal under [`WeightScope::Dataset`].
    pub class_weights: Vec<ClassWeights>,
    /// `[N, slots, 3]`, unused slots arbitrary.
    pub joints: Vec<f64>,
    pub joint_slots: usize,
    /// Number of real joints of each sample (≤ `joint_slots`).
    pub joint_counts: Vec<usize>,
    /// `[N, 3]`.
    pub base: Vec<f64>,
    /// Class index per sample.
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

/// Scalar loss nodes recorded on the graph.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub mask: NodeId,
    pub jcoords: NodeId,
    pub bcoords: NodeId,
    pub type_: NodeId,
    pub final_: NodeId,
}

impl LossNodes {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        let v = |id| g.value(id)[0].to_f64().unwrap_or(f64::NAN);
        LossBreakdown {
            mask: v(self.mask),
            jcoords: v(self.jcoords),
            bcoords: v(self.bcoords),
            type_: v(self.type_),
            final_: v(self.final_),
        }
    }
}

fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// Batch mask loss: mean pixel loss over every pixel of every image.
/// `est` holds probabilities `[N, 1, H, W]`.
pub fn mask_loss_node<T: Scalar>(g: &mut Graph<T>, est: NodeId, t: &BatchTargets) -> Result<NodeId> {
    let shape = g.shape(est).to_vec();
    let per_image = t.mask_hw.0 * t.mask_hw.1;
    if shape != [t.batch, 1, t.mask_hw.0, t.mask_hw.1] || t.mask.len() != t.batch * per_image {
        return Err(ObjectiveError::LengthMismatch {
            what: "mask_loss_node",
            left: g.value(est).len(),
            right: t.mask.len(),
        });
    }
    let mut fg = Vec::with_capacity(t.mask.len());
    let mut bg = Vec::with_capacity(t.mask.len());
    for (i, m) in t.mask.chunks(per_image).enumerate() {
        let w = &t.class_weights[i];
        for &v in m {
            let on = f64::from(v.min(1));
            fg.push(cast(w.w_fg * on));
            bg.push(cast(w.w_bg * (1.0 - on)));
        }
    }
    let p = g.clamp(est, PROB_EPS, 1.0 - PROB_EPS)?;
    let ln_p = g.ln(p)?;
    let q = g.affine(p, -1.0, 1.0)?;
    let ln_q = g.ln(q)?;
    let fg = g.input(&shape, fg)?;
    let bg = g.input(&shape, bg)?;
    let a = g.mul(fg, ln_p)?;
    let b = g.mul(bg, ln_q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    Ok(g.scale(m, -1.0)?)
}

/// Mean over samples of the mean joint distance, counting only each
/// sample's real joints. `est` is `[N, slots * 3]`.
pub fn joint_loss_node<T: Scalar>(g: &mut Graph<T>, est: NodeId, t: &BatchTargets) -> Result<NodeId> {
    let rows = t.batch * t.joint_slots;
    if g.value(est).len() != rows * 3 || t.joints.len() != rows * 3 {
        return Err(ObjectiveError::LengthMismatch {
            what: "joint_loss_node",
            left: g.value(est).len(),
            right: t.joints.len(),
        });
    }
    let e = g.reshape(est, &[rows, 3])?;
    let gt = g.input(&[rows, 3], t.joints.iter().map(|&v| cast(v)).collect())?;
    let d = g.sub(e, gt)?;
    let norms = g.row_norm(d)?;
    let mut w = Vec::with_capacity(rows);
    for &n in &t.joint_counts {
        for slot in 0..t.joint_slots {
            let on = slot < n;
            w.push(cast(if on { 1.0 / (n as f64 * t.batch as f64) } else { 0.0 }));
        }
    }
    let w = g.input(&[rows], w)?;
    let wn = g.mul(norms, w)?;
    Ok(g.sum(wn)?)
}

/// Mean base distance over the batch. `est` is `[N, 3]`.
pub fn base_loss_node<T: Scalar>(g: &mut Graph<T>, est: NodeId, t: &BatchTargets) -> Result<NodeId> {
    if g.shape(est) != [t.batch, 3] || t.base.len() != t.batch * 3 {
        return Err(ObjectiveError::LengthMismatch {
            what: "base_loss_node",
            left: g.value(est).len(),
            right: t.base.len(),
        });
    }
    let gt = g.input(&[t.batch, 3], t.base.iter().map(|&v| cast(v)).collect())?;
    let d = g.sub(est, gt)?;
    let n = g.row_norm(d)?;
    Ok(g.mean(n)?)
}

/// Mean cross-entropy over the batch. `probs` is softmax output `[N, R]`.
pub fn type_loss_node<T: Scalar>(g: &mut Graph<T>, probs: NodeId, t: &BatchTargets) -> Result<NodeId> {
    if g.shape(probs) != [t.batch, t.num_classes] || t.classes.len() != t.batch {
        return Err(ObjectiveError::LengthMismatch {
            what: "type_loss_node",
            left: g.value(probs).len(),
            right: t.batch * t.num_classes,
        });
    }
    let mut onehot = vec![T::zero(); t.batch * t.num_classes];
    for (i, &c) in t.classes.iter().enumerate() {
        if c >= t.num_classes {
            return Err(ObjectiveError::NotOneHot(vec![c as f64]));
        }
        onehot[i * t.num_classes + c] = T::one();
    }
    let q = g.clamp(probs, PROB_EPS, 1.0)?;
    let lq = g.ln(q)?;
    let p = g.input(&[t.batch, t.num_classes], onehot)?;
    let pl = g.mul(p, lq)?;
    let s = g.sum(pl)?;
    Ok(g.scale(s, -1.0 / t.batch as f64)?)
}

/// Records all four losses and their weighted sum.
pub fn loss_nodes<T: Scalar>(
    g: &mut Graph<T>,
    mask_probs: NodeId,
    joints: NodeId,
    base: NodeId,
    type_probs: NodeId,
    t: &BatchTargets,
    w: &LossWeights,
) -> Result<LossNodes> {
    let mask = mask_loss_node(g, mask_probs, t)?;
    let jcoords = joint_loss_node(g, joints, t)?;
    let bcoords = base_loss_node(g, base, t)?;
    let type_ = type_loss_node(g, type_probs, t)?;
    let terms = [(mask, w.mask), (jcoords, w.jcoords), (bcoords, w.bcoords), (type_, w.type_)];
    let mut acc: Option<NodeId> = None;
    for (node, weight) in terms {
        let s = g.scale(node, weight)?;
        acc = Some(match acc {
            None => s,
            Some(a) => g.add(a, s)?,
        });
    }
    Ok(LossNodes {
        mask,
        jcoords,
        bcoords,
        type_,
        final_: acc.expect("four terms"),
    })
}

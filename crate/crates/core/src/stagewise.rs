//! Training engine: pretraining on the base family, two-stage transfer to
//! new robot types, and the checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::multinet::{outputs_from_graph, ArchitectureDescriptor, LayerGroup, NetError, Network, PreparedSample};
use crate::objectives::{
    loss_nodes, BatchTargets, ClassWeights, LogRecord, LossBreakdown, LossWeights, ObjectiveError, WeightScope,
};
use crate::tensor::{Adam, Graph, Optimizer, Sgd, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyData,
    #[error("pretraining needs a single robot family, found: {0:?}")]
    MixedFamilies(Vec<String>),
    #[error(
        "the transfer dataset must include the base family `{family}` the network was trained on, \
         as well as the new robot types; found families {found:?}"
    )]
    MissingBaseFamily { family: String, found: Vec<String> },
    #[error("the transfer dataset contains no robot type the network does not already know")]
    NoNewClass,
    #[error("sample {id}: robot `{robot}` is not among the network classes {classes:?}")]
    UnknownClass { id: usize, robot: String, classes: Vec<String> },
    #[error("non-finite loss at {stage} iteration {iter}: {breakdown:?} (samples {sample_ids:?})")]
    NonFinite {
        iter: usize,
        stage: String,
        breakdown: LossBreakdown,
        lr: f64,
        sample_ids: Vec<usize>,
    },
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    fn build(&self) -> Box<dyn Optimizer<f32>> {
        match *self {
            Self::Sgd { momentum } => Box::new(Sgd::new(momentum)),
            Self::Adam { beta1, beta2, eps } => Box::new(Adam::new(beta1, beta2, eps)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    /// Length of the learning-rate schedule. Pretraining runs exactly this
    /// many iterations; a transfer run never exceeds it.
    pub total_iters: usize,
    pub batch_size: usize,
    pub plateau_window: usize,
    pub plateau_tau: f64,
    /// Hard cap on stage-1 iterations.
    pub stage1_max_iters: usize,
    /// Hard cap on stage-2 iterations.
    pub stage2_extra_iters: usize,
    pub loss_weights: LossWeights,
    pub weight_scope: WeightScope,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-6,
            total_iters: 4000,
            batch_size: 8,
            plateau_window: 500,
            plateau_tau: 0.005,
            stage1_max_iters: 2000,
            stage2_extra_iters: 2000,
            loss_weights: LossWeights::default(),
            weight_scope: WeightScope::Dataset,
            optimizer: OptimizerConfig::Sgd { momentum: 0.9 },
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return bad(format!("need lr_start > lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        if self.plateau_window < 100 {
            return bad(format!("plateau_window must be at least 100, got {}", self.plateau_window));
        }
        if !(self.plateau_tau > 0.0 && self.plateau_tau < 1.0) {
            return bad(format!("plateau_tau must lie in (0, 1), got {}", self.plateau_tau));
        }
        if self.total_iters == 0 || self.batch_size == 0 {
            return bad("total_iters and batch_size must be positive".into());
        }
        let w = &self.loss_weights;
        if [w.mask, w.jcoords, w.bcoords, w.type_].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("loss weights must be non-negative: {w:?}"));
        }
        Ok(())
    }
}

/// Geometric decay from `lr_start` at iteration 0 to `lr_end` at `total_iters`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let t = (iter as f64 / cfg.total_iters as f64).clamp(0.0, 1.0);
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t)
}

/// True when the mean of the latest `window` losses improves on the mean of
/// the window before it by less than the relative threshold `tau`.
pub fn plateau_detector(history: &[f64], window: usize, tau: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prev = mean(&history[n - 2 * window..n - window]);
    let last = mean(&history[n - window..]);
    (prev - last) / prev < tau
}

/// Bookkeeping stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub base_family: String,
    pub iterations: usize,
    pub stage: String,
    pub final_losses: Option<LossBreakdown>,
    pub seed: u64,
    pub class_weights: Option<ClassWeights>,
    pub stage_switch_iter: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: TrainingMeta,
}

/// Outcome of one training phase.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    /// First iteration of stage 2 (transfer only).
    pub stage_switch_iter: Option<usize>,
    /// Whether stage 1 ended by plateau rather than by its cap.
    pub stage1_plateaued: bool,
    /// Mean training loss over the last plateau window of stage 1.
    pub stage1_plateau_loss: Option<f64>,
    /// Mean training loss over the final window of the run.
    pub final_window_loss: f64,
    /// SHA-256 of every parameter blob at the start, at the stage switch
    /// and at the end, keyed by tensor name.
    pub digests_start: BTreeMap<String, String>,
    pub digests_switch: BTreeMap<String, String>,
    pub digests_end: BTreeMap<String, String>,
    pub trainable_stage1: Vec<String>,
    pub trainable_stage2: Vec<String>,
    pub seconds: f64,
}

pub fn tensor_digest(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn param_digests(net: &Network<f32>) -> BTreeMap<String, String> {
    net.params()
        .iter()
        .map(|(_, name, t)| (name.to_owned(), tensor_digest(t)))
        .collect()
}

fn trainable_names(net: &Network<f32>) -> Vec<String> {
    net.params()
        .iter()
        .filter(|(_, _, t)| !t.is_frozen())
        .map(|(_, n, _)| n.to_owned())
        .collect()
}

/// Class index of every sample under the network's class list.
fn class_indices(net: &Network<f32>, data: &[PreparedSample]) -> Result<Vec<usize>> {
    data.iter()
        .map(|s| {
            net.classes()
                .iter()
                .position(|c| *c == s.robot)
                .ok_or_else(|| TrainError::UnknownClass {
                    id: s.id,
                    robot: s.robot.clone(),
                    classes: net.classes().to_vec(),
                })
        })
        .collect()
}

/// Dataset-level class weights over the given samples.
pub fn dataset_class_weights(data: &[PreparedSample]) -> Result<ClassWeights> {
    Ok(ClassWeights::from_masks(data.iter().map(|s| s.mask.as_slice()))?)
}

/// Assembles targets for the samples at `idx`.
pub fn batch_targets(
    net: &Network<f32>,
    data: &[PreparedSample],
    classes: &[usize],
    idx: &[usize],
    weights: &ClassWeights,
    scope: WeightScope,
) -> BatchTargets {
    let d = net.descriptor();
    let slots = d.max_joints;
    let mut t = BatchTargets {
        batch: idx.len(),
        mask: Vec::with_capacity(idx.len() * d.input.pixels()),
        mask_hw: (d.input.height, d.input.width),
        class_weights: Vec::with_capacity(idx.len()),
        joints: Vec::with_capacity(idx.len() * slots * 3),
        joint_slots: slots,
        joint_counts: Vec::with_capacity(idx.len()),
        base: Vec::with_capacity(idx.len() * 3),
        classes: Vec::with_capacity(idx.len()),
        num_classes: net.classes().len(),
    };
    for &i in idx {
        let s = &data[i];
        t.mask.extend_from_slice(&s.mask);
        t.class_weights.push(match scope {
            WeightScope::Dataset => *weights,
            WeightScope::PerImage => ClassWeights::from_masks([s.mask.as_slice()]).unwrap_or(*weights),
        });
        for slot in 0..slots {
            t.joints.extend_from_slice(s.joints.get(slot).unwrap_or(&[0.0; 3]));
        }
        t.joint_counts.push(s.joints.len().min(slots));
        t.base.extend_from_slice(&s.base);
        t.classes.push(classes[i]);
    }
    t
}

fn batch_input(net: &Network<f32>, data: &[PreparedSample], idx: &[usize]) -> Vec<f32> {
    let mut x = Vec::with_capacity(idx.len() * net.input_len());
    for &i in idx {
        x.extend_from_slice(&data[i].input);
    }
    x
}

/// Endless epoch-wise shuffled batches, reproducible from the seed.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: n,
            epoch: 0,
            seed,
            batch: batch.min(n),
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
        self.epoch += 1;
        self.pos = 0;
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Everything one optimisation step needs, bundled for reuse across stages.
struct Trainer<'a> {
    data: &'a [PreparedSample],
    classes: Vec<usize>,
    weights: ClassWeights,
    cfg: &'a TrainConfig,
    batcher: Batcher,
    optimizer: Box<dyn Optimizer<f32>>,
}

impl<'a> Trainer<'a> {
    fn new(net: &Network<f32>, data: &'a [PreparedSample], cfg: &'a TrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(TrainError::EmptyData);
        }
        Ok(Self {
            data,
            classes: class_indices(net, data)?,
            weights: dataset_class_weights(data)?,
            cfg,
            batcher: Batcher::new(data.len(), cfg.batch_size, cfg.seed),
            optimizer: cfg.optimizer.build(),
        })
    }

    fn step(&mut self, net: &mut Network<f32>, iter: usize, stage: &str) -> Result<LogRecord> {
        let idx = self.batcher.next();
        let t = batch_targets(net, self.data, &self.classes, &idx, &self.weights, self.cfg.weight_scope);
        let d = net.descriptor();
        let mut g = Graph::new();
        let x = g.input(&[idx.len(), 3, d.input.height, d.input.width], batch_input(net, self.data, &idx))?;
        let h = net.forward_graph(&mut g, x)?;
        let l = loss_nodes(&mut g, h.mask_probs, h.joints, h.base, h.type_probs, &t, &self.cfg.loss_weights)?;
        let breakdown = l.breakdown(&g);
        let lr = lr_schedule(iter, self.cfg);
        let finite = [breakdown.mask, breakdown.jcoords, breakdown.bcoords, breakdown.type_, breakdown.final_]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(TrainError::NonFinite {
                iter,
                stage: stage.to_owned(),
                breakdown,
                lr,
                sample_ids: idx.iter().map(|&i| self.data[i].id).collect(),
            });
        }
        net.params_mut().zero_grad();
        g.backward_trainable(l.final_, net.params_mut())?;
        self.optimizer.step(net.params_mut(), lr)?;
        Ok(LogRecord::new(iter, stage, &breakdown, lr))
    }
}

/// Receives every log line as it is produced.
pub type LogSink<'a> = &'a mut dyn FnMut(&LogRecord);

fn window_mean(log: &[LogRecord], window: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(window)..];
    tail.iter().map(|r| r.final_).sum::<f64>() / tail.len().max(1) as f64
}

fn distinct_families(data: &[PreparedSample]) -> Vec<String> {
    let mut f: Vec<String> = data.iter().map(|s| s.family.clone()).collect();
    f.sort();
    f.dedup();
    f
}

/// Trains every layer of `net` for `cfg.total_iters` iterations.
pub fn pretrain(
    mut net: Network<f32>,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    sink: LogSink<'_>,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    let families = distinct_families(data);
    if families.len() != 1 {
        return Err(TrainError::MixedFamilies(families));
    }
    let start = std::time::Instant::now();
    net.set_trainable_groups(&LayerGroup::ALL);
    let mut report = TrainReport {
        digests_start: param_digests(&net),
        trainable_stage1: trainable_names(&net),
        ..TrainReport::default()
    };
    let mut trainer = Trainer::new(&net, data, cfg)?;
    for iter in 0..cfg.total_iters {
        let rec = trainer.step(&mut net, iter, "pretrain")?;
        sink(&rec);
        report.log.push(rec);
    }
    report.final_window_loss = window_mean(&report.log, cfg.plateau_window);
    report.digests_end = param_digests(&net);
    report.seconds = start.elapsed().as_secs_f64();
    let meta = TrainingMeta {
        base_family: families[0].clone(),
        iterations: cfg.total_iters,
        stage: "pretrain".into(),
        final_losses: report.log.last().map(|r| breakdown_of(r)),
        seed: cfg.seed,
        class_weights: Some(trainer.weights),
        stage_switch_iter: None,
    };
    Ok((Checkpoint { network: net, meta }, report))
}

fn breakdown_of(r: &LogRecord) -> LossBreakdown {
    LossBreakdown {
        mask: r.mask,
        jcoords: r.jcoords,
        bcoords: r.bcoords,
        type_: r.type_,
        final_: r.final_,
    }
}

/// Class list after transfer: the checkpoint's classes followed by the new
/// ones in order of first appearance.
pub fn transfer_classes(known: &[String], data: &[PreparedSample]) -> Vec<String> {
    let mut out = known.to_vec();
    for s in data {
        if !out.contains(&s.robot) {
            out.push(s.robot.clone());
        }
    }
    out
}

/// Two-stage transfer. Stage 1 trains only `stage1_trainable` layers until
/// the loss plateaus or `stage1_max_iters` is reached; stage 2 also unlocks
/// `stage2_unlockable` layers and runs until the next plateau or
/// `stage2_extra_iters`. `trunk_frozen` layers are never updated.
pub fn transfer(
    ckpt: Checkpoint,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    sink: LogSink<'_>,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    let base = ckpt.meta.base_family.clone();
    let families = distinct_families(data);
    if !families.contains(&base) {
        return Err(TrainError::MissingBaseFamily { family: base, found: families });
    }
    let classes = transfer_classes(ckpt.network.classes(), data);
    if classes.len() == ckpt.network.classes().len() {
        return Err(TrainError::NoNewClass);
    }
    let start = std::time::Instant::now();
    let mut net = ckpt.network.with_classes(classes, cfg.seed ^ 0x7e57)?;
    let mut report = TrainReport {
        digests_start: param_digests(&net),
        ..TrainReport::default()
    };
    let mut trainer = Trainer::new(&net, data, cfg)?;
    let window = cfg.plateau_window;

    net.set_trainable_groups(&[LayerGroup::Stage1Trainable]);
    report.trainable_stage1 = trainable_names(&net);
    let mut history = Vec::new();
    let mut iter = 0;
    while iter < cfg.stage1_max_iters.min(cfg.total_iters) {
        let rec = trainer.step(&mut net, iter, "stage1")?;
        history.push(rec.final_);
        sink(&rec);
        report.log.push(rec);
        iter += 1;
        if plateau_detector(&history, window, cfg.plateau_tau) {
            report.stage1_plateaued = true;
            break;
        }
    }
    report.stage1_plateau_loss = Some(window_mean(&report.log, window));
    report.stage_switch_iter = Some(iter);
    report.digests_switch = param_digests(&net);

    net.set_trainable_groups(&[LayerGroup::Stage1Trainable, LayerGroup::Stage2Unlockable]);
    report.trainable_stage2 = trainable_names(&net);
    history.clear();
    let end = (iter + cfg.stage2_extra_iters).min(cfg.total_iters);
    while iter < end {
        let rec = trainer.step(&mut net, iter, "stage2")?;
        history.push(rec.final_);
        sink(&rec);
        report.log.push(rec);
        iter += 1;
        if plateau_detector(&history, window, cfg.plateau_tau) {
            break;
        }
    }
    report.final_window_loss = window_mean(&report.log, window);
    report.digests_end = param_digests(&net);
    report.seconds = start.elapsed().as_secs_f64();
    let meta = TrainingMeta {
        base_family: base,
        iterations: iter,
        stage: "stage2".into(),
        final_losses: report.log.last().map(breakdown_of),
        seed: cfg.seed,
        class_weights: Some(trainer.weights),
        stage_switch_iter: report.stage_switch_iter,
    };
    Ok((Checkpoint { network: net, meta }, report))
}

/// Mean loss over `data` in batches of `batch`, with class weights taken
/// from `weights`.
pub fn validation_loss(
    net: &Network<f32>,
    data: &[PreparedSample],
    weights: &ClassWeights,
    loss_weights: &LossWeights,
    batch: usize,
) -> Result<LossBreakdown> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let classes = class_indices(net, data)?;
    let d = net.descriptor();
    let mut acc = LossBreakdown::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let t = batch_targets(net, data, &classes, chunk, weights, WeightScope::Dataset);
        let mut g = Graph::new();
        let x = g.input(&[chunk.len(), 3, d.input.height, d.input.width], batch_input(net, data, chunk))?;
        let h = net.forward_graph(&mut g, x)?;
        let l = loss_nodes(&mut g, h.mask_probs, h.joints, h.base, h.type_probs, &t, loss_weights)?;
        let b = l.breakdown(&g);
        let w = chunk.len() as f64;
        acc.mask += b.mask * w;
        acc.jcoords += b.jcoords * w;
        acc.bcoords += b.bcoords * w;
        acc.type_ += b.type_ * w;
        acc.final_ += b.final_ * w;
    }
    let n = data.len() as f64;
    Ok(LossBreakdown {
        mask: acc.mask / n,
        jcoords: acc.jcoords / n,
        bcoords: acc.bcoords / n,
        type_: acc.type_ / n,
        final_: acc.final_ / n,
    })
}

/// Forward pass over `data` in batches, one output per sample.
pub fn predict(
    net: &Network<f32>,
    data: &[PreparedSample],
    batch: usize,
) -> Result<Vec<crate::multinet::NetworkOutputs>> {
    let d = net.descriptor();
    let idx: Vec<usize> = (0..data.len()).collect();
    let run = |chunk: &[usize]| -> Result<Vec<crate::multinet::NetworkOutputs>> {
        let mut g = Graph::new();
        let x = g.input(&[chunk.len(), 3, d.input.height, d.input.width], batch_input(net, data, chunk))?;
        let h = net.forward_graph(&mut g, x)?;
        Ok(outputs_from_graph(&g, &h, d, net.classes().len()))
    };
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<_>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| run(c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<_>> = chunks.iter().map(|c| run(c)).collect();
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_len: u64,
    group: LayerGroup,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    descriptor: ArchitectureDescriptor,
    classes: Vec<String>,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
    /// SHA-256 of the raw header text with this value empty.
    header_sha256: String,
}

/// Header JSON with its own digest as the last value. The digest covers the
/// raw bytes with that value left empty, so any edit to the text shows.
fn sealed_header(header: &CheckpointHeader) -> Vec<u8> {
    let blank = serde_json::to_vec(&CheckpointHeader {
        header_sha256: String::new(),
        ..header.clone()
    })
    .expect("header serializes");
    debug_assert!(blank.ends_with(b"\"header_sha256\":\"\"}"));
    let digest = hex::encode(Sha256::digest(&blank));
    let mut out = blank[..blank.len() - 2].to_vec();
    out.extend_from_slice(digest.as_bytes());
    out.extend_from_slice(b"\"}");
    out
}

fn header_is_sealed(raw: &[u8], header: &CheckpointHeader) -> bool {
    let suffix = format!("{}\"}}", header.header_sha256);
    if header.header_sha256.len() != 64 || !raw.ends_with(suffix.as_bytes()) {
        return false;
    }
    let mut blank = raw[..raw.len() - suffix.len()].to_vec();
    blank.extend_from_slice(b"\"}");
    hex::encode(Sha256::digest(&blank)) == header.header_sha256
}

/// Serialises a checkpoint: magic, version, header length, JSON header,
/// then little-endian `f32` blobs in header order.
pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let groups = net.param_groups();
    let tensors = net
        .params()
        .iter()
        .zip(&groups)
        .map(|((_, name, t), (_, group))| TensorEntry {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            byte_len: (t.len() * 4) as u64,
            group: *group,
            sha256: tensor_digest(t),
        })
        .collect();
    let header = CheckpointHeader {
        descriptor: net.descriptor().clone(),
        classes: net.classes().to_vec(),
        meta: ckpt.meta.clone(),
        tensors,
        header_sha256: String::new(),
    };
    let json = sealed_header(&header);
    let mut out = Vec::with_capacity(16 + json.len() + net.params().num_values() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in net.params().iter() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&checkpoint_bytes(ckpt)).map_err(io)?;
    f.sync_all().map_err(io)
}

/// Parses and audits checkpoint bytes: magic, version, header, per-tensor
/// length, shape and checksum, and absence of trailing data.
pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| TrainError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| fail(format!("header length {header_len} exceeds file size")))? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| fail(format!("header: {e}")))?;
    if !header_is_sealed(&bytes[16..header_end], &header) {
        return Err(fail("header fails its checksum".into()));
    }
    let mut pos = header_end;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.byte_len != (n * 4) as u64 {
            return Err(fail(format!("tensor `{}`: byte length {} does not match shape {:?}", e.name, e.byte_len, e.shape)));
        }
        let end = pos + n * 4;
        if end > bytes.len() {
            return Err(fail(format!("tensor `{}` is truncated", e.name)));
        }
        let values: Vec<f32> = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        pos = end;
        let t = Tensor::from_vec(&e.shape, values)?;
        if tensor_digest(&t) != e.sha256 {
            return Err(fail(format!("tensor `{}` fails its checksum", e.name)));
        }
        tensors.push((e.name.clone(), t));
    }
    if pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - pos)));
    }
    let network = Network::from_parts(header.descriptor, header.classes, tensors)?;
    for (e, (_, group)) in header.tensors.iter().zip(network.param_groups()) {
        if e.group != group {
            return Err(fail(format!("tensor `{}` tagged {:?}, architecture says {:?}", e.name, e.group, group)));
        }
    }
    Ok(Checkpoint {
        network,
        meta: header.meta,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes, path)
}

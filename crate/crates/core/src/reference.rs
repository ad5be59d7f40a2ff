//! The reference experiment: pretrain on the UR family, transfer to all
//! catalog robots, evaluate, and measure loss against training-set size.
//! Samples are generated and kept in memory at network resolution.

use serde::{Deserialize, Serialize};

use crate::metrics::{evaluate, loss_vs_dataset_size, DistanceBreakdown, EvalReport, SampleResult, SizeRow};
use crate::multinet::{ArchitectureDescriptor, Network, PreparedSample};
use crate::scene::{assign_splits, map_samples, select_models, GeneratorConfig, SceneError, Split};
use crate::stagewise::{pretrain, transfer, Checkpoint, OptimizerConfig, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub seed: u64,
    pub base_types: Vec<String>,
    pub all_types: Vec<String>,
    pub base_per_type: usize,
    pub transfer_per_type: usize,
    pub architecture: ArchitectureDescriptor,
    pub pretrain: TrainConfig,
    pub transfer: TrainConfig,
    /// Training-set sizes for the loss-versus-size study (empty skips it).
    pub sizes: Vec<usize>,
    pub sizes_train: TrainConfig,
    /// Passes over each subset in the size study; `None` keeps the fixed
    /// budget of `sizes_train`.
    pub sizes_epochs: Option<f64>,
    pub mask_threshold: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let adam = OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        Self {
            seed: 2024,
            base_types: vec!["ur3".into(), "ur5".into(), "ur10".into()],
            all_types: vec![
                "ur3".into(),
                "ur5".into(),
                "ur10".into(),
                "kuka_iiwa".into(),
                "panda".into(),
            ],
            base_per_type: 500,
            transfer_per_type: 200,
            architecture: ArchitectureDescriptor::default(),
            pretrain: TrainConfig {
                total_iters: 5000,
                optimizer: adam,
                seed: 11,
                ..TrainConfig::default()
            },
            transfer: TrainConfig {
                total_iters: 6000,
                stage1_max_iters: 3000,
                stage2_extra_iters: 3000,
                optimizer: adam,
                seed: 12,
                ..TrainConfig::default()
            },
            sizes: vec![100, 200, 400],
            sizes_train: TrainConfig {
                total_iters: 600,
                plateau_window: 100,
                stage1_max_iters: 300,
                stage2_extra_iters: 300,
                optimizer: adam,
                seed: 13,
                ..TrainConfig::default()
            },
            sizes_epochs: Some(10.0),
            mask_threshold: 0.5,
        }
    }
}

/// Renders `n_per_type` samples of each named robot and prepares them at the
/// network's input size, with the per-class 80/20 split applied.
pub fn generate_prepared(
    names: &[String],
    n_per_type: usize,
    gen: &GeneratorConfig,
    arch: &ArchitectureDescriptor,
    seed: u64,
) -> Result<Vec<PreparedSample>, SceneError> {
    let models = select_models(names)?;
    let prepared = map_samples(&models, n_per_type, gen, seed, |s| {
        PreparedSample::from_sample(&s, &models[s.robot_type], Split::Train, arch.input)
    })?;
    let mut out = Vec::with_capacity(prepared.len());
    for p in prepared {
        out.push(p.map_err(|e| SceneError::Degenerate(e.to_string()))?);
    }
    let types: Vec<usize> = (0..out.len()).map(|i| i / n_per_type).collect();
    for (s, split) in out.iter_mut().zip(assign_splits(&types, models.len(), seed)) {
        s.split = split;
    }
    Ok(out)
}

pub fn train_split(data: &[PreparedSample]) -> Vec<PreparedSample> {
    data.iter().filter(|s| s.split == Split::Train).cloned().collect()
}

pub fn test_split(data: &[PreparedSample]) -> Vec<PreparedSample> {
    data.iter().filter(|s| s.split == Split::Test).cloned().collect()
}

#[derive(Debug, Clone)]
pub struct ReferenceOutcome {
    pub config: ReferenceConfig,
    pub pretrained: Checkpoint,
    pub pretrain_report: TrainReport,
    pub pretrain_eval: EvalReport,
    pub transferred: Checkpoint,
    pub transfer_report: TrainReport,
    pub report: EvalReport,
    pub breakdown: DistanceBreakdown,
    pub rows: Vec<SampleResult>,
    pub sizes: Vec<SizeRow>,
    pub seconds: Seconds,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Seconds {
    pub generate: f64,
    pub pretrain: f64,
    pub transfer: f64,
    pub evaluate: f64,
    pub sizes: f64,
    pub total: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Net(#[from] crate::multinet::NetError),
    #[error(transparent)]
    Train(#[from] crate::stagewise::TrainError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// Runs the whole experiment. `progress` receives short status lines.
pub fn run_reference(
    cfg: &ReferenceConfig,
    gen: &GeneratorConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ReferenceOutcome, ReferenceError> {
    let clock = std::time::Instant::now();
    let mut secs = Seconds::default();
    let lap = |t: &mut std::time::Instant| {
        let s = t.elapsed().as_secs_f64();
        *t = std::time::Instant::now();
        s
    };
    let mut t = std::time::Instant::now();

    let base = generate_prepared(&cfg.base_types, cfg.base_per_type, gen, &cfg.architecture, cfg.seed)?;
    let mixed = generate_prepared(
        &cfg.all_types,
        cfg.transfer_per_type,
        gen,
        &cfg.architecture,
        cfg.seed.wrapping_add(1),
    )?;
    secs.generate = lap(&mut t);
    progress(&format!("generated {} base and {} mixed samples", base.len(), mixed.len()));

    let net = Network::<f32>::build(cfg.architecture.clone(), cfg.base_types.clone(), cfg.seed)?;
    let base_train = train_split(&base);
    let (pretrained, pretrain_report) = pretrain(net, &base_train, &cfg.pretrain, &mut |r| {
        if r.iter % 500 == 0 {
            progress(&format!("pretrain {} loss {:.4}", r.iter, r.final_));
        }
    })?;
    secs.pretrain = lap(&mut t);
    let (pretrain_eval, _, _) = evaluate(&pretrained.network, &base, cfg.mask_threshold, gen.distance_range)?;

    let mixed_train = train_split(&mixed);
    let (transferred, transfer_report) = transfer(pretrained.clone(), &mixed_train, &cfg.transfer, &mut |r| {
        if r.iter % 500 == 0 {
            progress(&format!("{} {} loss {:.4}", r.stage, r.iter, r.final_));
        }
    })?;
    secs.transfer = lap(&mut t);

    let (report, breakdown, rows) = evaluate(&transferred.network, &mixed, cfg.mask_threshold, gen.distance_range)?;
    secs.evaluate = lap(&mut t);

    let sizes = if cfg.sizes.is_empty() {
        Vec::new()
    } else {
        let val = test_split(&mixed);
        loss_vs_dataset_size(
            &pretrained,
            &mixed_train,
            &val,
            &cfg.sizes,
            &cfg.sizes_train,
            cfg.sizes_epochs,
            cfg.seed,
        )?
    };
    secs.sizes = lap(&mut t);
    secs.total = clock.elapsed().as_secs_f64();

    Ok(ReferenceOutcome {
        config: cfg.clone(),
        pretrained,
        pretrain_report,
        pretrain_eval,
        transferred,
        transfer_report,
        report,
        breakdown,
        rows,
        sizes,
        seconds: secs,
    })
}

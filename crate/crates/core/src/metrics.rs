//! Evaluation: mask accuracy, type accuracy, position errors, error versus
//! camera distance, loss versus training-set size and forward timing.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::multinet::{select_joint_outputs, Network, NetworkOutputs, PreparedSample};
use crate::scene::Split;
use crate::stagewise::{predict, transfer, validation_loss, Checkpoint, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("no test-split samples to evaluate")]
    EmptySplit,
    #[error("requested size {size} exceeds the {available} available samples")]
    SizeTooLarge { size: usize, available: usize },
    #[error("sizes must be ascending and positive: {0:?}")]
    Sizes(Vec<usize>),
    #[error("need at least 10 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{}: {source}", path.display())]
    Csv { path: std::path::PathBuf, source: csv::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Fraction of pixels whose thresholded prediction equals the ground truth.
pub fn mask_accuracy(est: &[f64], gt: &[u8], threshold: f64) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(MetricsError::LengthMismatch {
            what: "mask_accuracy",
            left: est.len(),
            right: gt.len(),
        });
    }
    let hits = est
        .iter()
        .zip(gt)
        .filter(|(&e, &g)| (e >= threshold) == (g != 0))
        .count();
    Ok(hits as f64 / est.len() as f64)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-joint Euclidean errors in centimetres over the sample's real joints.
pub fn joint_errors_cm(out: &NetworkOutputs, s: &PreparedSample) -> Vec<f64> {
    select_joint_outputs(&out.joints_est, s.joints.len())
        .iter()
        .zip(&s.joints)
        .map(|(e, j)| dist(e, j) * 100.0)
        .collect()
}

/// `(mean joint error, base error)`, both in centimetres.
pub fn position_errors(out: &NetworkOutputs, s: &PreparedSample) -> (f64, f64) {
    let errs = joint_errors_cm(out, s);
    let joint = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    (joint, dist(&out.base_est, &s.base) * 100.0)
}

/// Median by sorting; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One row of the per-sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: usize,
    #[serde(rename = "type")]
    pub robot: String,
    pub family: String,
    pub distance: f64,
    pub mask_acc: f64,
    pub joint_err_cm: f64,
    pub base_err_cm: f64,
    pub type_correct: bool,
    pub family_correct: bool,
    pub predicted: String,
    pub reach: f64,
    /// Per-joint errors joined by `;`, for pooled statistics.
    pub joint_errs_cm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub n: usize,
    pub mask_accuracy: f64,
    pub type_accuracy: f64,
    pub joint_error_median: f64,
    pub base_error_median: f64,
    /// Median over all joints of all samples (instead of per-sample means).
    pub joint_error_pooled_median: f64,
    /// Median of per-sample error divided by that robot's reach.
    pub joint_error_median_reach: f64,
    pub base_error_median_reach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub threshold: f64,
    pub samples: usize,
    /// Robot families (variants of one family merged).
    pub groups: Vec<GroupStats>,
    /// One entry per class.
    pub raw: Vec<GroupStats>,
    pub overall: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub bin_low: f64,
    pub bin_high: f64,
    #[serde(rename = "type")]
    pub family: String,
    pub median_err_cm: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBreakdown {
    pub bin_width: f64,
    pub range: [f64; 2],
    pub bins: Vec<DistanceBin>,
}

fn stats(name: &str, rows: &[&SampleResult], family_view: bool) -> GroupStats {
    let n = rows.len();
    let mean = |f: &dyn Fn(&SampleResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n.max(1) as f64;
    let col = |f: &dyn Fn(&SampleResult) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
    let pooled: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.joint_errs_cm.split(';').filter_map(|v| v.parse::<f64>().ok()))
        .collect();
    GroupStats {
        name: name.to_owned(),
        n,
        mask_accuracy: mean(&|r| r.mask_acc),
        type_accuracy: mean(&|r| {
            let ok = if family_view { r.family_correct } else { r.type_correct };
            f64::from(u8::from(ok))
        }),
        joint_error_median: median(&col(&|r| r.joint_err_cm)),
        base_error_median: median(&col(&|r| r.base_err_cm)),
        joint_error_pooled_median: median(&pooled),
        joint_error_median_reach: median(&col(&|r| r.joint_err_cm / 100.0 / r.reach)),
        base_error_median_reach: median(&col(&|r| r.base_err_cm / 100.0 / r.reach)),
    }
}

/// Builds the report from per-sample rows; also used to recompute a report
/// from a dump.
pub fn summarize(rows: &[SampleResult], threshold: f64) -> EvalReport {
    let mut families: BTreeMap<&str, Vec<&SampleResult>> = BTreeMap::new();
    let mut classes: BTreeMap<&str, Vec<&SampleResult>> = BTreeMap::new();
    for r in rows {
        families.entry(&r.family).or_default().push(r);
        classes.entry(&r.robot).or_default().push(r);
    }
    let all: Vec<&SampleResult> = rows.iter().collect();
    EvalReport {
        split: Split::Test,
        threshold,
        samples: rows.len(),
        groups: families.iter().map(|(k, v)| stats(k, v, true)).collect(),
        raw: classes.iter().map(|(k, v)| stats(k, v, false)).collect(),
        overall: stats("all", &all, true),
    }
}

/// Median joint error per family in distance bins of `width` meters.
pub fn distance_breakdown(rows: &[SampleResult], range: [f64; 2], width: f64) -> DistanceBreakdown {
    let nbins = (((range[1] - range[0]) / width).ceil() as usize).max(1);
    let mut families: Vec<&str> = rows.iter().map(|r| r.family.as_str()).collect();
    families.sort_unstable();
    families.dedup();
    let mut bins = Vec::new();
    for fam in families {
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); nbins];
        for r in rows.iter().filter(|r| r.family == fam) {
            let k = (((r.distance - range[0]) / width).floor().max(0.0) as usize).min(nbins - 1);
            buckets[k].push(r.joint_err_cm);
        }
        for (k, b) in buckets.iter().enumerate() {
            bins.push(DistanceBin {
                bin_low: range[0] + k as f64 * width,
                bin_high: (range[0] + (k + 1) as f64 * width).min(range[1].max(range[0] + width)),
                family: fam.to_owned(),
                median_err_cm: median(b),
                n: b.len(),
            });
        }
    }
    DistanceBreakdown {
        bin_width: width,
        range,
        bins,
    }
}

/// Family that a class name belongs to, resolved through the samples.
fn family_lookup(data: &[PreparedSample]) -> BTreeMap<String, String> {
    data.iter().map(|s| (s.robot.clone(), s.family.clone())).collect()
}

/// Per-sample rows for the test split of `data` given network outputs.
pub fn sample_results(
    outputs: &[NetworkOutputs],
    test: &[&PreparedSample],
    classes: &[String],
    families: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<Vec<SampleResult>> {
    if outputs.len() != test.len() {
        return Err(MetricsError::LengthMismatch {
            what: "outputs vs samples",
            left: outputs.len(),
            right: test.len(),
        });
    }
    outputs
        .iter()
        .zip(test)
        .map(|(o, s)| {
            let (joint, base) = position_errors(o, s);
            let predicted = classes[o.predicted_class()].clone();
            let pred_family = families.get(&predicted).cloned().unwrap_or_else(|| predicted.clone());
            let errs = joint_errors_cm(o, s);
            Ok(SampleResult {
                id: s.id,
                robot: s.robot.clone(),
                family: s.family.clone(),
                distance: s.distance,
                mask_acc: mask_accuracy(&o.mask_prob, &s.mask, threshold)?,
                joint_err_cm: joint,
                base_err_cm: base,
                type_correct: predicted == s.robot,
                family_correct: pred_family == s.family,
                predicted,
                reach: s.reach,
                joint_errs_cm: errs.iter().map(|e| format!("{e}")).collect::<Vec<_>>().join(";"),
            })
        })
        .collect()
}

/// Full evaluation over the test split. Training samples in `data` are
/// ignored.
pub fn evaluate(
    net: &Network<f32>,
    data: &[PreparedSample],
    threshold: f64,
    distance_range: [f64; 2],
) -> Result<(EvalReport, DistanceBreakdown, Vec<SampleResult>)> {
    let test: Vec<PreparedSample> = data.iter().filter(|s| s.split == Split::Test).cloned().collect();
    if test.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let outputs = predict(net, &test, 16)?;
    evaluate_outputs(&outputs, data, net.classes(), threshold, distance_range)
}

/// Evaluation of precomputed outputs, one per test sample of `data` in order.
pub fn evaluate_outputs(
    outputs: &[NetworkOutputs],
    data: &[PreparedSample],
    classes: &[String],
    threshold: f64,
    distance_range: [f64; 2],
) -> Result<(EvalReport, DistanceBreakdown, Vec<SampleResult>)> {
    let refs: Vec<&PreparedSample> = data.iter().filter(|s| s.split == Split::Test).collect();
    if refs.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let mut families = family_lookup(data);
    // classes the network knows but the data lacks keep their own name
    for c in classes {
        families.entry(c.clone()).or_insert_with(|| c.clone());
    }
    let rows = sample_results(outputs, &refs, classes, &families, threshold)?;
    let report = summarize(&rows, threshold);
    let breakdown = distance_breakdown(&rows, distance_range, 0.25);
    Ok((report, breakdown, rows))
}

/// Test double that answers with the ground truth of each sample.
pub fn oracle_outputs(samples: &[&PreparedSample], classes: &[String], max_joints: usize) -> Vec<NetworkOutputs> {
    let eps = crate::objectives::PROB_EPS;
    samples
        .iter()
        .map(|s| {
            let mut joints = s.joints.clone();
            while joints.len() < max_joints {
                joints.push(*s.joints.last().unwrap_or(&s.base));
            }
            let type_dist = match classes.iter().position(|c| *c == s.robot) {
                Some(k) => (0..classes.len()).map(|i| if i == k { 1.0 } else { 0.0 }).collect(),
                None => vec![1.0 / classes.len() as f64; classes.len()],
            };
            NetworkOutputs {
                mask_prob: s.mask.iter().map(|&m| if m != 0 { 1.0 - eps } else { eps }).collect(),
                joints_est: joints,
                base_est: s.base,
                type_dist,
            }
        })
        .collect()
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn read_csv<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub val_loss: f64,
    pub seconds: f64,
    pub seed: u64,
}

/// Stratified random subsample: classes are shuffled independently and
/// interleaved, so every prefix is close to class-balanced.
pub fn stratified_subsample(data: &[PreparedSample], size: usize, seed: u64) -> Result<Vec<PreparedSample>> {
    if size > data.len() {
        return Err(MetricsError::SizeTooLarge {
            size,
            available: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        by_class.entry(&s.robot).or_default().push(i);
    }
    let mut queues: Vec<Vec<usize>> = by_class.into_values().collect();
    for q in &mut queues {
        q.shuffle(&mut rng);
        q.reverse();
    }
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        for q in queues.iter_mut() {
            if out.len() < size {
                if let Some(i) = q.pop() {
                    out.push(data[i].clone());
                }
            }
        }
    }
    Ok(out)
}

/// `cfg` with its iteration budget set to `epochs` passes over `size`
/// samples, split evenly between the two transfer stages.
pub fn epoch_budget(cfg: &TrainConfig, size: usize, epochs: f64) -> TrainConfig {
    let total = ((epochs * size as f64 / cfg.batch_size as f64).ceil() as usize).max(2);
    TrainConfig {
        total_iters: total,
        stage1_max_iters: total / 2,
        stage2_extra_iters: total - total / 2,
        ..cfg.clone()
    }
}

/// Transfers `ckpt` with growing random subsets of `train` and records the
/// final loss on `val` and the wall-clock time of each run. With `epochs`
/// set, every run makes that many passes over its subset; otherwise all
/// runs use the budget in `cfg`.
pub fn loss_vs_dataset_size(
    ckpt: &Checkpoint,
    train: &[PreparedSample],
    val: &[PreparedSample],
    sizes: &[usize],
    cfg: &TrainConfig,
    epochs: Option<f64>,
    seed: u64,
) -> Result<Vec<SizeRow>> {
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::Sizes(sizes.to_vec()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let row_seed = seed.wrapping_add(size as u64);
        rows.push(size_row(ckpt, train, val, size, cfg, epochs, row_seed)?);
    }
    Ok(rows)
}

/// One row of [`loss_vs_dataset_size`], reproducible from its seed.
pub fn size_row(
    ckpt: &Checkpoint,
    train: &[PreparedSample],
    val: &[PreparedSample],
    size: usize,
    cfg: &TrainConfig,
    epochs: Option<f64>,
    seed: u64,
) -> Result<SizeRow> {
    let cfg = &match epochs {
        Some(e) => epoch_budget(cfg, size, e),
        None => cfg.clone(),
    };
    let subset = stratified_subsample(train, size, seed)?;
    let start = Instant::now();
    let (out, _) = transfer(ckpt.clone(), &subset, cfg, &mut |_| {})?;
    let seconds = start.elapsed().as_secs_f64();
    let weights = out
        .meta
        .class_weights
        .map_or_else(|| crate::stagewise::dataset_class_weights(&subset), Ok)?;
    let loss = validation_loss(&out.network, val, &weights, &cfg.loss_weights, 16)?;
    Ok(SizeRow {
        size,
        val_loss: loss.final_,
        seconds,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub n_frames: usize,
    pub warmup: usize,
    pub input: [usize; 2],
    pub hardware: String,
}

pub fn hardware_string() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {} {}; {threads} hardware threads; single-frame forward",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Wall-clock statistics of single-frame forward passes, after a short
/// warm-up that is not measured.
pub fn timing(net: &Network<f32>, input: &[f32], n_frames: usize) -> Result<TimingReport> {
    if n_frames < 10 {
        return Err(MetricsError::TooFewFrames(n_frames));
    }
    let warmup = 3;
    let mut times = Vec::with_capacity(n_frames);
    for i in 0..warmup + n_frames {
        let t = Instant::now();
        let out = net.forward(&[input]).map_err(TrainError::from)?;
        std::hint::black_box(out);
        if i >= warmup {
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    let d = net.descriptor();
    Ok(TimingReport {
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
        n_frames,
        warmup,
        input: [d.input.width, d.input.height],
        hardware: hardware_string(),
    })
}

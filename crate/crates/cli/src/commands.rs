use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use armsight::metrics::{
    distance_breakdown, evaluate, evaluate_outputs, loss_vs_dataset_size, oracle_outputs, read_csv, timing,
    DistanceBreakdown, EvalReport, GroupStats, SampleResult,
};
use armsight::multinet::{InputSize, Network, PreparedSample};
use armsight::objectives::LogRecord;
use armsight::reference::run_reference;
use armsight::scene::{catalog, make_dataset, select_models, Dataset, Split};
use armsight::stagewise::{load_checkpoint, pretrain, save_checkpoint, transfer, Checkpoint, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{required, RunConfig};
use crate::error::CliError;
use crate::rundir::RunDir;

pub const CHECKPOINT: &str = "checkpoint.amnt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const DISTANCE_CSV: &str = "error_vs_distance.csv";
pub const SIZES_CSV: &str = "loss_vs_size.csv";
pub const LOSS_CURVE_CSV: &str = "loss_curve.csv";

/// Row of the loss-versus-dataset-size curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCurveRow {
    pub size: usize,
    pub val_loss: f64,
    pub seconds: f64,
}

fn done(dir: RunDir) -> Result<(), CliError> {
    let root = dir.root().to_owned();
    let digest = dir.finish()?;
    println!("wrote {} (manifest digest {digest})", root.display());
    Ok(())
}

/// Loads a dataset directory at network resolution; `split` filters records.
pub fn load_prepared(
    dir: &Path,
    size: InputSize,
    split: Option<Split>,
) -> Result<(Dataset, Vec<PreparedSample>), CliError> {
    let ds = Dataset::load(dir)?;
    let models = catalog();
    let records: Vec<_> = ds
        .samples
        .iter()
        .filter(|r| split.map_or(true, |s| r.split == s))
        .collect();
    let data = records
        .par_iter()
        .map(|r| PreparedSample::load(dir, &ds, r, &models, size))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ds, data))
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let gen = cfg.generator.build()?;
    let models = select_models(&cfg.generator.types)?;
    let dir = RunDir::create(out, cfg)?;
    let ds = make_dataset(&models, cfg.generator.n_per_type, &gen, cfg.seed, dir.root())?;
    println!("{:<12} {:>6} {:>6} {:>6}", "type", "train", "test", "total");
    let train = ds.class_counts(Some(Split::Train));
    let test = ds.class_counts(Some(Split::Test));
    for (i, name) in ds.classes.iter().enumerate() {
        println!("{name:<12} {:>6} {:>6} {:>6}", train[i], test[i], train[i] + test[i]);
    }
    println!(
        "{:<12} {:>6} {:>6} {:>6}",
        "all",
        train.iter().sum::<usize>(),
        test.iter().sum::<usize>(),
        ds.samples.len()
    );
    done(dir)
}

/// Streams log records to a JSON-lines file, keeping the first write error.
struct LogWriter {
    out: BufWriter<fs::File>,
    path: PathBuf,
    error: Option<std::io::Error>,
    every: usize,
}

impl LogWriter {
    fn new(path: PathBuf) -> Result<Self, CliError> {
        let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path,
            error: None,
            every: 500,
        })
    }

    fn record(&mut self, r: &LogRecord) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", r.to_json_line()) {
                self.error = Some(e);
            }
        }
        if r.iter % self.every == 0 {
            eprintln!("{} {:>6}  loss {:.4}  lr {:.2e}", r.stage, r.iter, r.final_, r.lr);
        }
    }

    fn close(mut self) -> Result<(), CliError> {
        if let Some(e) = self.error.take() {
            return Err(CliError::io(&self.path, e));
        }
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn write_training(dir: &RunDir, ckpt: &Checkpoint, mut report: TrainReport) -> Result<(), CliError> {
    save_checkpoint(&dir.path(CHECKPOINT), ckpt)?;
    // the per-step log lives in the JSON-lines file
    report.log.clear();
    dir.write_json("train_report.json", &report)?;
    Ok(())
}

pub fn pretrain_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data_dir = required(&cfg.paths.data, "--data")?;
    cfg.pretrain.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (ds, data) = load_prepared(&data_dir, cfg.architecture.input, Some(Split::Train))?;
    let net = Network::<f32>::build(cfg.architecture.clone(), ds.classes.clone(), cfg.seed)?;
    let dir = RunDir::create(out, cfg)?;
    let mut log = LogWriter::new(dir.path(TRAIN_LOG))?;
    let result = pretrain(net, &data, &cfg.pretrain, &mut |r| log.record(r));
    log.close()?;
    let (ckpt, report) = result?;
    eprintln!("final window loss {:.4}", report.final_window_loss);
    write_training(&dir, &ckpt, report)?;
    done(dir)
}

pub fn transfer_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data_dir = required(&cfg.paths.data, "--data")?;
    let ckpt_path = required(&cfg.paths.checkpoint, "--checkpoint")?;
    cfg.transfer.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let (_, data) = load_prepared(&data_dir, ckpt.network.descriptor().input, Some(Split::Train))?;
    let dir = RunDir::create(out, cfg)?;
    let mut log = LogWriter::new(dir.path(TRAIN_LOG))?;
    let result = transfer(ckpt, &data, &cfg.transfer, &mut |r| log.record(r));
    log.close()?;
    let (ckpt, report) = result?;
    match report.stage_switch_iter {
        Some(i) => eprintln!(
            "stage 2 from iteration {i} ({}); final window loss {:.4}",
            if report.stage1_plateaued { "plateau" } else { "stage-1 cap" },
            report.final_window_loss
        ),
        None => eprintln!("stage 2 never started; final window loss {:.4}", report.final_window_loss),
    }
    write_training(&dir, &ckpt, report)?;
    done(dir)
}

fn print_report(report: &EvalReport) {
    println!(
        "{:<12} {:>5} {:>7} {:>7} {:>10} {:>10}",
        "type", "n", "mask", "type", "joint_cm", "base_cm"
    );
    let line = |g: &GroupStats| {
        println!(
            "{:<12} {:>5} {:>7.4} {:>7.4} {:>10.2} {:>10.2}",
            g.name, g.n, g.mask_accuracy, g.type_accuracy, g.joint_error_median, g.base_error_median
        )
    };
    report.raw.iter().for_each(line);
    println!("families");
    report.groups.iter().for_each(line);
    line(&report.overall);
}

fn write_eval(dir: &RunDir, report: &EvalReport, breakdown: &DistanceBreakdown, rows: &[SampleResult]) -> Result<(), CliError> {
    dir.write_json("eval_report.json", report)?;
    dir.write_csv(SAMPLES_CSV, rows)?;
    dir.write_csv(DISTANCE_CSV, &breakdown.bins)?;
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, out: &Path, oracle: bool) -> Result<(), CliError> {
    let data_dir = required(&cfg.paths.data, "--data")?;
    let threshold = cfg.eval.mask_threshold;
    let (report, rows, range) = if oracle {
        let (ds, data) = load_prepared(&data_dir, cfg.architecture.input, None)?;
        let test: Vec<&PreparedSample> = data.iter().filter(|s| s.split == Split::Test).collect();
        let max_joints = data.iter().map(|s| s.joints.len()).max().unwrap_or(0);
        let outputs = oracle_outputs(&test, &ds.classes, max_joints);
        let (report, _, rows) = evaluate_outputs(&outputs, &data, &ds.classes, threshold, ds.distance_range)?;
        (report, rows, ds.distance_range)
    } else {
        let ckpt_path = required(&cfg.paths.checkpoint, "--checkpoint")?;
        let ckpt = load_checkpoint(&ckpt_path)?;
        let (ds, data) = load_prepared(&data_dir, ckpt.network.descriptor().input, None)?;
        let (report, _, rows) = evaluate(&ckpt.network, &data, threshold, ds.distance_range)?;
        (report, rows, ds.distance_range)
    };
    let breakdown = distance_breakdown(&rows, range, cfg.eval.bin_width);
    let dir = RunDir::create(out, cfg)?;
    write_eval(&dir, &report, &breakdown, &rows)?;
    print_report(&report);
    done(dir)
}

pub fn bench_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let net = match &cfg.paths.checkpoint {
        Some(p) => load_checkpoint(p)?.network,
        None => Network::<f32>::build(cfg.architecture.clone(), cfg.reference.all_types.clone(), cfg.seed)?,
    };
    let size = net.descriptor().input;
    let input = match &cfg.paths.data {
        Some(dir) => {
            let (_, data) = load_prepared(dir, size, Some(Split::Test))?;
            data.into_iter()
                .next()
                .ok_or_else(|| CliError::Eval("dataset has no test samples".into()))?
                .input
        }
        None => vec![0.5; net.input_len()],
    };
    let report = timing(&net, &input, cfg.eval.bench_frames)?;
    println!(
        "{} frames at {}x{}: mean {:.2} ms, min {:.2} ms, max {:.2} ms",
        report.n_frames, size.width, size.height, report.mean_ms, report.min_ms, report.max_ms
    );
    println!("{}", report.hardware);
    let dir = RunDir::create(out, cfg)?;
    dir.write_json("timing.json", &report)?;
    done(dir)
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Plot-ready CSVs from a finished run: error versus distance from its
/// per-sample dump, the training-loss curve when the run has a log, and the
/// loss-versus-size curve (copied from the run or computed from a pretrained
/// checkpoint and a mixed dataset).
pub fn export_curves(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let run = required(&cfg.paths.run, "--run")?;
    let samples = run.join(SAMPLES_CSV);
    if !samples.exists() {
        return Err(CliError::Config(format!(
            "{} has no {SAMPLES_CSV}; export-curves needs an eval or reference run",
            run.display()
        )));
    }
    let rows: Vec<SampleResult> = read_csv(&samples)?;
    let breakdown = distance_breakdown(&rows, cfg.generator.distance_range, cfg.eval.bin_width);

    let stored = run.join(SIZES_CSV);
    let sizes: Vec<SizeCurveRow> = if stored.exists() {
        read_csv(&stored)?
    } else {
        let (Some(ckpt_path), Some(data_dir)) = (&cfg.paths.checkpoint, &cfg.paths.data) else {
            return Err(CliError::Config(format!(
                "{} has no {SIZES_CSV}; pass --checkpoint (pretrained) and --data (mixed dataset) to compute it",
                run.display()
            )));
        };
        let ckpt = load_checkpoint(ckpt_path)?;
        let (_, data) = load_prepared(data_dir, ckpt.network.descriptor().input, None)?;
        let (train, val): (Vec<_>, Vec<_>) = data.into_iter().partition(|s| s.split == Split::Train);
        loss_vs_dataset_size(&ckpt, &train, &val, &cfg.sizes.sizes, &cfg.sizes.train, cfg.sizes.epochs, cfg.seed)?
            .into_iter()
            .map(|r| SizeCurveRow {
                size: r.size,
                val_loss: r.val_loss,
                seconds: r.seconds,
            })
            .collect()
    };

    let dir = RunDir::create(out, cfg)?;
    dir.write_csv(DISTANCE_CSV, &breakdown.bins)?;
    dir.write_csv(SIZES_CSV, &sizes)?;
    for (log, curve) in [
        (TRAIN_LOG, LOSS_CURVE_CSV),
        ("pretrain_log.jsonl", "pretrain_loss_curve.csv"),
        ("transfer_log.jsonl", "transfer_loss_curve.csv"),
    ] {
        let p = run.join(log);
        if p.exists() {
            dir.write_csv(curve, &read_log(&p)?)?;
        }
    }
    done(dir)
}

/// The full experiment in one run directory.
pub fn reference_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let gen = cfg.generator.build()?;
    let dir = RunDir::create(out, cfg)?;
    let outcome = run_reference(&cfg.reference(), &gen, &mut |s| eprintln!("{s}"))?;

    save_checkpoint(&dir.path("pretrained.amnt"), &outcome.pretrained)?;
    save_checkpoint(&dir.path("transferred.amnt"), &outcome.transferred)?;
    for (name, report) in [("pretrain", &outcome.pretrain_report), ("transfer", &outcome.transfer_report)] {
        let lines: String = report.log.iter().map(|r| r.to_json_line() + "\n").collect();
        dir.write_bytes(&format!("{name}_log.jsonl"), lines.as_bytes())?;
        let mut summary = report.clone();
        summary.log.clear();
        dir.write_json(&format!("{name}_report.json"), &summary)?;
    }
    dir.write_json("pretrain_eval.json", &outcome.pretrain_eval)?;
    let breakdown = distance_breakdown(&outcome.rows, gen.distance_range, cfg.eval.bin_width);
    write_eval(&dir, &outcome.report, &breakdown, &outcome.rows)?;
    let sizes: Vec<SizeCurveRow> = outcome
        .sizes
        .iter()
        .map(|r| SizeCurveRow {
            size: r.size,
            val_loss: r.val_loss,
            seconds: r.seconds,
        })
        .collect();
    dir.write_csv(SIZES_CSV, &sizes)?;
    dir.write_json("seconds.json", &outcome.seconds)?;
    print_report(&outcome.report);
    println!("total {:.0} s", outcome.seconds.total);
    done(dir)
}

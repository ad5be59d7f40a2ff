use std::path::{Path, PathBuf};

use armsight::multinet::ArchitectureDescriptor;
use armsight::reference::ReferenceConfig;
use armsight::scene::GeneratorConfig;
use armsight::stagewise::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a command needs, written verbatim into its run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorSettings,
    pub architecture: ArchitectureDescriptor,
    pub pretrain: TrainConfig,
    pub transfer: TrainConfig,
    pub eval: EvalSettings,
    pub sizes: SizeStudy,
    pub reference: ReferenceSettings,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSettings {
    pub types: Vec<String>,
    pub n_per_type: usize,
    /// Camera-to-base distance in meters.
    pub distance_range: [f64; 2],
    /// Camera elevation in radians.
    pub elevation_range: [f64; 2],
    pub foreground_band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub mask_threshold: f64,
    /// Width of the error-versus-distance bins in meters.
    pub bin_width: f64,
    pub bench_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeStudy {
    pub sizes: Vec<usize>,
    pub train: TrainConfig,
    /// Passes over each subset; `null` keeps the fixed budget of `train`.
    pub epochs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSettings {
    pub base_types: Vec<String>,
    pub all_types: Vec<String>,
    pub base_per_type: usize,
    pub transfer_per_type: usize,
}

/// Inputs of the command that wrote this config. The output directory is
/// not recorded: a rerun always needs a fresh one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub run: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = ReferenceConfig::default();
        Self {
            seed: r.seed,
            generator: GeneratorSettings::default(),
            architecture: r.architecture,
            pretrain: r.pretrain,
            transfer: r.transfer,
            eval: EvalSettings {
                mask_threshold: r.mask_threshold,
                bin_width: 0.25,
                bench_frames: 200,
            },
            sizes: SizeStudy {
                sizes: r.sizes,
                train: r.sizes_train,
                epochs: r.sizes_epochs,
            },
            reference: ReferenceSettings {
                base_types: r.base_types,
                all_types: r.all_types,
                base_per_type: r.base_per_type,
                transfer_per_type: r.transfer_per_type,
            },
            paths: Paths::default(),
        }
    }
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            types: vec!["ur3".into(), "ur5".into(), "ur10".into()],
            n_per_type: 500,
            distance_range: g.distance_range,
            elevation_range: g.elevation_range,
            foreground_band: g.foreground_band,
        }
    }
}

impl Default for EvalSettings {
    fn default() -> Self {
        RunConfig::default().eval
    }
}

impl Default for SizeStudy {
    fn default() -> Self {
        RunConfig::default().sizes
    }
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        RunConfig::default().reference
    }
}

impl GeneratorSettings {
    pub fn build(&self) -> Result<GeneratorConfig, CliError> {
        let g = GeneratorConfig {
            distance_range: self.distance_range,
            elevation_range: self.elevation_range,
            foreground_band: self.foreground_band,
            ..GeneratorConfig::default()
        };
        g.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(g)
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.generator.build()?;
        self.architecture.validate().map_err(|e| cfg(&e))?;
        for t in [&self.pretrain, &self.transfer, &self.sizes.train] {
            t.validate().map_err(|e| cfg(&e))?;
        }
        let e = &self.eval;
        if !(e.mask_threshold > 0.0 && e.mask_threshold < 1.0) {
            return Err(CliError::Config(format!("mask_threshold must lie in (0, 1), got {}", e.mask_threshold)));
        }
        if !(e.bin_width > 0.0) {
            return Err(CliError::Config(format!("bin_width must be positive, got {}", e.bin_width)));
        }
        if let Some(ep) = self.sizes.epochs {
            if !(ep > 0.0 && ep.is_finite()) {
                return Err(CliError::Config(format!("sizes.epochs must be positive, got {ep}")));
            }
        }
        Ok(())
    }

    pub fn reference(&self) -> ReferenceConfig {
        ReferenceConfig {
            seed: self.seed,
            base_types: self.reference.base_types.clone(),
            all_types: self.reference.all_types.clone(),
            base_per_type: self.reference.base_per_type,
            transfer_per_type: self.reference.transfer_per_type,
            architecture: self.architecture.clone(),
            pretrain: self.pretrain.clone(),
            transfer: self.transfer.clone(),
            sizes: self.sizes.sizes.clone(),
            sizes_train: self.sizes.train.clone(),
            sizes_epochs: self.sizes.epochs,
            mask_threshold: self.eval.mask_threshold,
        }
    }
}

/// A path the command cannot run without; `what` names its flag.
pub fn required(stored: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    stored
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing {what} (flag or paths entry in the config)")))
}

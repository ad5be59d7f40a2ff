use std::path::Path;

use armsight::metrics::MetricsError;
use armsight::multinet::NetError;
use armsight::reference::ReferenceError;
use armsight::scene::SceneError;
use armsight::stagewise::TrainError;

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid configuration or arguments
  3  I/O error or unreadable dataset
  4  transfer dataset lacks the base family of the checkpoint
  5  corrupt or incompatible checkpoint
  6  training diverged (non-finite loss)
  7  evaluation failed (for example an empty test split)
  8  dataset unsuitable for the command (mixed families for pretraining,
     no new robot type for transfer, robot type unknown to the network)

Environment:
  ARMSIGHT_THREADS  caps the number of worker threads";

#[derive(Debug)]
pub enum CliError {
    Internal(String),
    Config(String),
    Io(String),
    MissingBaseFamily(String),
    Checkpoint(String),
    NonFinite(String),
    Eval(String),
    Dataset(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Internal(_) => 1,
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::MissingBaseFamily(_) => 4,
            Self::Checkpoint(_) => 5,
            Self::NonFinite(_) => 6,
            Self::Eval(_) => 7,
            Self::Dataset(_) => 8,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (Self::Internal(m)
        | Self::Config(m)
        | Self::Io(m)
        | Self::MissingBaseFamily(m)
        | Self::Checkpoint(m)
        | Self::NonFinite(m)
        | Self::Eval(m)
        | Self::Dataset(m)) = self;
        f.write_str(m)
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        let m = e.to_string();
        match e {
            SceneError::UnknownRobot { .. } | SceneError::InvalidConfig(_) | SceneError::InvalidCamera(_) => {
                Self::Config(m)
            }
            SceneError::Io { .. } | SceneError::Image { .. } | SceneError::Json { .. } => Self::Io(m),
            _ => Self::Internal(m),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Scene(s) => s.into(),
            NetError::Descriptor(_) | NetError::Classes(_) => Self::Config(e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let m = e.to_string();
        match e {
            TrainError::Config(_) => Self::Config(m),
            TrainError::MissingBaseFamily { .. } => Self::MissingBaseFamily(m),
            TrainError::Checkpoint { .. } => Self::Checkpoint(m),
            TrainError::NonFinite { .. } => Self::NonFinite(m),
            TrainError::Io { .. } => Self::Io(m),
            TrainError::EmptyData
            | TrainError::MixedFamilies(_)
            | TrainError::NoNewClass
            | TrainError::UnknownClass { .. } => Self::Dataset(m),
            TrainError::Net(n) => n.into(),
            _ => Self::Internal(m),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Train(t) => t.into(),
            MetricsError::Csv { .. } => Self::Io(e.to_string()),
            MetricsError::Sizes(_) | MetricsError::SizeTooLarge { .. } | MetricsError::TooFewFrames(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Eval(e.to_string()),
        }
    }
}

impl From<ReferenceError> for CliError {
    fn from(e: ReferenceError) -> Self {
        match e {
            ReferenceError::Scene(x) => x.into(),
            ReferenceError::Net(x) => x.into(),
            ReferenceError::Train(x) => x.into(),
            ReferenceError::Metrics(x) => x.into(),
        }
    }
}

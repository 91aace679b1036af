//! Binaural perception network (shared encoder, ASPP, semantic, depth and
//! S³R decoders) with its training, evaluation and ablation harness.

pub mod ablate;
pub mod check;
pub mod config;
pub mod data;
pub mod net;
pub mod train;

use bapn_autodiff::AdError;
use bapn_core::dsp::DspError;
use bapn_core::io::IoError;
use bapn_core::metrics::MetricsError;
use bapn_core::scene::SceneError;

pub use config::{ExperimentConfig, InputSelection, KeyValue, LossWeights, ModelConfig, Settings, Tasks};
pub use data::{make_batch, Batch, Dataset};
pub use net::{Model, ModelOutput};
pub use train::{evaluate, infer_s3r, total_loss, train, EvalReport, RunRecord, S3rInference, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("data missing: {0}")]
    DataMissing(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize, record: Box<RunRecord> },
    #[error("missing target for task {0}")]
    MissingTarget(&'static str),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl ModelError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::Config(_) => "Config",
            ModelError::Ad(AdError::CheckpointCorrupt(_)) => "CheckpointCorrupt",
            ModelError::Ad(AdError::NonFinite(_)) => "NonFinite",
            ModelError::Ad(AdError::ShapeMismatch(_)) | ModelError::Metrics(MetricsError::ShapeMismatch(_)) => "ShapeMismatch",
            ModelError::Ad(_) => "Autodiff",
            ModelError::DataMissing(_) => "DataMissing",
            ModelError::DivergedLoss { .. } => "DivergedLoss",
            ModelError::MissingTarget(_) => "MissingTarget",
            ModelError::Dsp(DspError::SilentInput { .. }) | ModelError::Scene(SceneError::Dsp(DspError::SilentInput { .. })) => {
                "SilentInput"
            }
            ModelError::Dsp(_) => "Dsp",
            ModelError::Scene(_) => "Scene",
            ModelError::Metrics(_) => "Metrics",
            ModelError::Io(IoError::BadAudioFormat(_)) => "BadAudioFormat",
            ModelError::Io(_) => "IoFailure",
        }
    }

    /// True when the caller supplied bad input rather than hitting a fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            ModelError::DivergedLoss { .. } | ModelError::Ad(AdError::NonFinite(_)) | ModelError::Ad(AdError::MissingGrad(_))
        )
    }
}

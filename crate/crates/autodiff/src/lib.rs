//! A small reverse-mode tensor engine: the convolution, normalization,
//! activation, resampling and loss operators a binaural perception network
//! needs, plus Adam, checkpoints and a finite-difference gradient checker.

pub mod conv;
pub mod gradcheck;
pub mod params;
pub mod real;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, grad_check_floored, grad_check_many, relative_error, relative_error_floored, DEFAULT_FLOOR, DEFAULT_STEP};
pub use params::{AdamConfig, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{BnMode, BnStats, Grads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("i/o error: {0}")]
    Io(String),
}

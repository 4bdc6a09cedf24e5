//! Training loop: MAE loss on energies and forces, Adam with global-norm
//! clipping, a cosine learning-rate schedule and an optional energy-weight
//! ramp.
//!
//! The force loss depends on `∂E/∂x`, so its parameter gradient is a mixed
//! second derivative. The tape is first order only; the trainer differences
//! `∂E/∂θ` along the force-residual direction instead.

mod config;
mod loss;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use config::{HvpScheme, TrainConfig};
pub use loss::{loss, Loss};
pub use metrics::{baseline_mae, evaluate_frames, EnergyRow, EvalReport, ForceRow};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use schedule::{cosine_lr, dynamic_lambda_e, EnergyWeightRamp};
pub use trainer::{EpochRecord, FinalRecord, LogRecord, StepRecord, Trainer};

use std::path::PathBuf;

use crate::model::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss or gradient at step {step}; last good checkpoint: {}",
        last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    NonFinite { step: usize, last_good: Option<PathBuf> },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("schedule already finished after {0} steps")]
    Finished(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

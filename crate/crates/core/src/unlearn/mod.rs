//! Unlearning procedures and their baselines.
//!
//! Each noisy procedure post-processes a trained model using retain data
//! only; [`run_pipeline`] chains a noisy phase with clean fine-tuning up to a
//! compute budget measured in epochs, and records a [`RunTrace`].

mod pipeline;
mod procedures;
mod stream;

pub use pipeline::{run_pipeline, run_pipeline_with_model, NoisyAccounting, PipelineConfig};
pub use procedures::{
    dp_sgd_group_train, finetune, gradient_clipping_unlearn, model_clipping_unlearn,
    output_perturbation, retrain, train_from_scratch, Evaluator,
};
pub use stream::{derive_seed, MinibatchStream, SeedStream};

use thiserror::Error;

use crate::accountant::AccountantError;
use crate::method::Method;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum UnlearnError {
    #[error(transparent)]
    Accountant(#[from] AccountantError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("retain set is empty")]
    EmptyRetain,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schedule does not certify the requested budget: {0}")]
    Uncertified(String),

    #[error("compute budget of {budget} epochs is smaller than the noisy phase ({needed} epochs)")]
    BudgetTooSmall { budget: usize, needed: usize },
}

pub type Result<T> = std::result::Result<T, UnlearnError>;

/// The (ε, δ) guarantee attached to a model and the number of noisy steps
/// that produced it. Retraining carries `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifiedTag {
    pub epsilon: f64,
    pub delta: f64,
    pub steps: u64,
}

impl CertifiedTag {
    pub fn exact() -> Self {
        Self {
            epsilon: 0.0,
            delta: 0.0,
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Noisy,
    Clean,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Noisy => "noisy",
            Phase::Clean => "clean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Global step index, counting noisy and clean steps.
    pub step: usize,
    pub phase: Phase,
    pub lr: f64,
    pub noise_std: f64,
    /// Minibatch loss at the iterate before the update.
    pub loss: f64,
    /// Norm of the iterate right before noise was added (noisy steps only).
    pub pre_noise_norm: Option<f64>,
}

/// Metrics after `epoch` epochs of compute.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Step records in the trace when this epoch closed.
    pub steps_run: usize,
    pub retain_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Mean minibatch loss over the steps of this epoch; `None` if none ran.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub method: Method,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// `None` for uncertified runs (plain fine-tuning of the trained model).
    pub certified: Option<CertifiedTag>,
    /// Test accuracy of the input model, before any unlearning.
    pub initial_test_accuracy: Option<f64>,
    /// Test accuracy right after the noisy phase.
    pub post_noise_test_accuracy: Option<f64>,
}

impl RunTrace {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            steps: Vec::new(),
            epochs: Vec::new(),
            certified: None,
            initial_test_accuracy: None,
            post_noise_test_accuracy: None,
        }
    }

    pub fn noisy_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.phase == Phase::Noisy)
            .count()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs
            .last()
            .and_then(|e| e.test_accuracy)
            .or(self.post_noise_test_accuracy)
    }
}

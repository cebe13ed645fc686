//! Losses, backpropagation, Adam and the pretraining / fine-tuning loops.

mod adam;
mod backprop;
mod gradcheck;
mod loops;
mod loss;
mod masking;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskId;
use crate::encoder::EncoderError;

pub use adam::{adam_step, OptimizerState, ParamSet};
pub use backprop::{backward, compute_loss, LossSpec};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use loops::{
    evaluate_macro_f1, finetune, mlm_accuracy, predict_labels, pretrain_mlm, EpochRecord, FinetuneOptions, History,
    LossMode, TrainingExample,
};
pub use loss::{entropy, hard_cross_entropy, kl_divergence, soft_cross_entropy, PROB_FLOOR};
pub use masking::{mask_tokens, MaskedSequence, MaskingPolicy};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("distribution lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite loss; first non-finite tensor: {tensor}")]
    NonFiniteLoss { tensor: String },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("batch size {batch} does not match {targets} targets")]
    TargetCount { batch: usize, targets: usize },
    #[error("examples without a usable {task} label: {}", .ids.join(", "))]
    MissingLabels { task: TaskId, ids: Vec<String> },
    #[error("epoch callback failed: {0}")]
    Callback(String),
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Linear warmup length; `None` means 10% of all steps.
    pub warmup_steps: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 3,
            warmup_steps: None,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Warmup length for a run of `total_steps` optimizer steps.
    pub fn resolved_warmup(&self, total_steps: usize) -> usize {
        self.warmup_steps
            .unwrap_or_else(|| (total_steps as f64 * 0.1).round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { beta2: -0.1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { clip_norm: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn warmup_defaults_to_ten_percent() {
        let c = TrainConfig::default();
        assert_eq!(c.resolved_warmup(200), 20);
        let c = TrainConfig { warmup_steps: Some(0), ..c };
        assert_eq!(c.resolved_warmup(200), 0);
    }
}

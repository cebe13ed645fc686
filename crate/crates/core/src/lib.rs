//! Offensive language identification and categorization.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`corpus`] reads OLID/SOLID-style TSV files, enforces the A/B/C label
//!   hierarchy and produces stratified folds.
//! * [`tokenizer`] learns a shared byte-level BPE vocabulary.
//! * [`encoder`] is a small post-layer-norm transformer encoder with an MLM
//!   head and one classifier head per task.
//! * [`training`] holds the losses, hand-written backpropagation, Adam and the
//!   pretraining / fine-tuning loops.
//! * [`distillation`] builds weighted teacher ensembles and trains students on
//!   their soft labels.
//! * [`ensemble`] trains k-fold cross-validation ensembles and averages their
//!   probabilities.
//! * [`evaluation`] computes confusion matrices and macro-F1.
//! * [`synthetic`] generates pseudo-language corpora with known structure for
//!   tests and smoke runs.

pub mod corpus;
pub mod distillation;
pub mod encoder;
pub mod ensemble;
pub mod evaluation;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod training;
mod tsv;

pub use corpus::{LabeledExample, SoftDistribution, TaskId};
pub use encoder::{EncoderConfig, ModelParameters};
pub use tensor::{Real, Tensor};
pub use tokenizer::{TokenSequence, Vocabulary};

use thiserror::Error;

/// Error type for operations that span several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] tokenizer::TokenizerError),
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
    #[error(transparent)]
    Checkpoint(#[from] encoder::CheckpointError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Distill(#[from] distillation::DistillError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

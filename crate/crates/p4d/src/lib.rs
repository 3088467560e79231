//! Desk-scale perceptual 4D distillation.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`scenegen`] renders deterministic synthetic 4D scenes with analytic
//!   ground truth (depth, flow, motion, Plucker camera rays) and templated
//!   region-prompted VQA.
//! - [`nnkit`] is a minimal differentiable numeric kit: a reverse-mode tape
//!   over `ndarray`, losses, initializers, the Adam optimizer with a cosine
//!   warmup schedule, a finite-difference gradient checker, and the
//!   checkpoint file format.
//! - [`teacher4d`] is the frozen 4D perception teacher: a unified video
//!   encoder plus per-modality decoders, pretrained on scenegen ground truth.
//! - [`student`] is the toy multimodal student: vision encoder, timestamp
//!   positional encoding, projector, causal language model, and output head.
//! - [`distill`] holds the distillation core: the perception decoder, the
//!   latent/explicit losses, the end-to-end trainer, and the ablation matrix.
//! - [`evalkit`] loads VQA datasets and computes multiple-choice accuracy,
//!   relative accuracy, and random baselines with per-category reports.
//! - [`cli`] wires everything into subcommands with run manifests.

pub mod cli;
pub mod config;
pub mod distill;
pub mod evalkit;
pub mod guide;
pub mod manifest;
pub mod nnkit;
pub mod scenegen;
pub mod student;
pub mod teacher4d;
pub mod trace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum P4dError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid data at line {line}: {msg}")]
    InvalidRecord { line: usize, msg: String },
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("frozen-model violation: {0}")]
    FrozenViolation(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("tokenizer error: out-of-vocabulary token `{0}`")]
    OutOfVocabulary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for P4dError {
    fn from(e: serde_json::Error) -> Self {
        P4dError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, P4dError>;

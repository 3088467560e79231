//! Minimal differentiable numeric kit shared by the teacher, the student,
//! and the trainer.
//!
//! The centerpiece is [`tape::Tape`], a reverse-mode tape over dynamic
//! `ndarray` arrays. Everything here runs in 64-bit floats; the models in
//! this crate are small enough that CPU f64 throughput is not a constraint
//! and verification (gradient checks, bit-identical reruns) wants the
//! precision.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use params::{Param, ParamStore};
pub use tape::{Tape, VarId};

/// Dynamic-dimension f64 array, the single tensor type used throughout.
pub type Arr = ndarray::ArrayD<f64>;

/// Scalar as a zero-dimensional [`Arr`].
pub fn scalar(x: f64) -> Arr {
    ndarray::arr0(x).into_dyn()
}

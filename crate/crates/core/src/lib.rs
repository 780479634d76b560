//! Continual-learning engine.
//!
//! Everything in this crate is deterministic given a seed and runs without
//! `std`: models, task streams, per-layer plasticity profiling, the
//! feature-regulated trainer, baseline trainers, evaluation metrics, and the
//! FLOPs / peak-memory accountant. IO, file formats, and the CLI live in the
//! companion `lightcl` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod accounting;
pub mod arch;
pub mod baselines;
pub mod error;
pub mod layers;
pub mod lightcl;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod outcome;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Ensemble sign-attack toolkit: a dense-tensor autodiff engine, a zoo of
//! small convolutional classifiers, the two-stage watertox attack with its
//! sign-vote consensus, the NI-FGSM baseline, and the evaluation metrics
//! (accuracy, attack success rate, transfer floors, paired statistics).
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory buffers. Dataset files, weight archives, reports, and the CLI
//! live in the companion `watertox-cli` crate.
//!
//! Determinism contract: every function in this crate is a pure function of
//! its inputs. Seeded randomness goes through [`rng`], float math goes
//! through `libm`, and reductions run in a fixed order, so identical seeds
//! produce bit-identical tensors on every platform.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod math;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;

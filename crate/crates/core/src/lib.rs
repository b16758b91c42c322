//! Online adaptation of a batch-normalized classifier to shifted input domains.
//!
//! A classifier trained on one acquisition condition keeps its weights frozen
//! at deployment; only the per-channel batch-norm statistics are re-estimated
//! from the incoming, unlabeled frame stream. The crate also provides the two
//! reference points used to judge that adaptation: frozen source statistics
//! (lower bound) and joint training with per-domain statistics (upper bound),
//! plus a synthetic multi-domain benchmark and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod batchnorm;
pub mod data;
pub mod dial;
pub mod domains;
pub mod error;
pub mod harness;
pub mod network;
pub mod onda;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

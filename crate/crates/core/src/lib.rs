//! Convergence-rate machinery for ℓ¹-regularised inverse problems.
//!
//! The crate covers forward operators on truncated sequences, restricted
//! source-condition certificates and their constants γₙ, the rate function
//! φ and the variational inequality it certifies, a Tikhonov ℓ¹ solver, and
//! a reproducible harness measuring empirical error decay against φ(δ).

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod harness;
pub mod operator;
pub mod rate;
pub mod seeding;
pub mod sequence;
pub mod solver;

pub use error::{Error, Result};
pub use operator::{ForwardOperator, OperatorConfig, YNorm};
pub use sequence::{IndexSetFamily, SignPattern, TruncatedSequence};

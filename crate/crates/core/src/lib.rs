//! Uncertainty-aware soft dynamic time warping.
//!
//! Sequences are aligned under a Gibbs distribution over monotone warping
//! paths whose costs are weighted by per-correspondence precisions. The
//! crate provides the alignment kernels with exact enumeration oracles,
//! learnable variance heads, barycenter estimation, and the downstream
//! classification, forecasting, episodic, and dictionary-coding procedures.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod barycenter;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod lbfgs;
pub mod matrix;
pub mod selftest;
pub mod sequence;
pub mod synth;
pub mod tasks;
pub mod uncertainty;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use sequence::Sequence;

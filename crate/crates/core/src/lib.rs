//! Loss conditional training (LCT) over the Vector Scaling (VS) loss family
//! for binary classification under heavy class imbalance.
//!
//! The crate is organised around the pieces of the method:
//!
//! - [`loss`]: the VS loss in general and binary form, its gradients, and the
//!   geometry of its break-even set.
//! - [`dist`]: the linear-density distribution that λ is drawn from.
//! - [`nn`]: a small dense network with one FiLM conditioning block,
//!   manual backpropagation and SGD with momentum.
//! - [`metrics`]: confusion counts, rate metrics, ROC curves and AUC.
//! - [`data`]: synthetic Gaussian datasets, minority subsampling, CSV I/O.
//! - [`train`]: single-loss and loss-conditional training loops.
//! - [`analysis`]: sweeps, ROC aggregation, polynomial fits and paired t-tests.

// Negated comparisons are used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod dist;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod special;
pub mod train;

pub use error::{Error, Result};

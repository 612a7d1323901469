//! Mini-batch coreset selection by normalized-gradient matching, plus the
//! desk-scale training laboratory that exercises it.
//!
//! The pipeline: sample a large candidate batch, keep every small-source
//! example, estimate last-layer gradients with two-point probes replayed
//! from cached activations, normalize them by a shared moment history,
//! sparsify per source with top-h magnitude masks, and pick per-source
//! medoids by lazy greedy facility location under the masked L1 distance.
//! The selected mini-batch trains a small exactly-differentiable classifier
//! whose backprop gradients act as the oracle for every estimator.

pub mod cluster;
pub mod data;
pub mod error;
pub mod facility;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod parallel;
pub mod selector;
pub mod zo;

pub use error::{Error, Result};

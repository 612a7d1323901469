//! Experiment runner: configuration, the training loop, the theory-check
//! suite, the variance probe, and file outputs.

pub mod benchrun;
pub mod config;
pub mod metrics;
pub mod probe;
pub mod theory;
pub mod train;

pub use config::{BenchConfig, DatasetConfig, ExperimentConfig, Method, ProbeConfig, TheoryConfig};
pub use probe::run_variance_probe;
pub use theory::run_theory_checks;
pub use train::{evaluate, prepare_dataset, run_training, run_training_on, TrainResult};

//! Experiment orchestration for embedding inversion: configuration,
//! synthetic corpora, the staged pipeline, PR-curve plots and attacker
//! comparison tables.

pub mod compare;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod sweep_csv;
pub mod synth;

pub use config::ExperimentConfig;
pub use pipeline::run_experiment;

//! Configuration, pipelines and artifact emission.

pub mod config;
pub mod pipeline;
pub mod svg;
pub mod table;

pub use config::ExperimentConfig;
pub use pipeline::{run_figure1, run_figure2, run_figure3, run_prop33, EvalPlan, RunOutput};

//! Configuration, experiment drivers and reproducible output for the CLI.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
pub use experiments::{
    build_operator, load_dataset, run_alpha_tune, run_dim_experiment, run_lasso_solve, run_mismatch_grid,
    wc_curve, CellStats, Dataset, DimExperiment, ErrorGrid,
};
pub use output::RunManifest;

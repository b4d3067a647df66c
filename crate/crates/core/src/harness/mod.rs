//! Config-driven experiment runner, CSV/JSON outputs and SVG plots.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{AlgorithmEntry, AlgorithmKind, ExperimentConfig};
pub use plot::{load_panels, plot_panels, render_svg, Panel};
pub use runner::{
    cells, check_experiment, mean_se_ci, run_experiment, worker_threads, Cell, CheckLine,
    ExperimentReport, Instance, RUNS_HEADER, SUMMARY_HEADER,
};

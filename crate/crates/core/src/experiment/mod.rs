//! Synthetic benchmark: noisy-label data, uniform TTA against fitted
//! weights, and the CSV/SVG report.

mod config;
mod data;
mod report;
mod run;

pub use config::{DataSource, ExperimentConfig, FitMethod, MetricKind, SigmaEps, TaskKind, SEED_ENV};
pub use data::{generate_synthetic, Polynomial, SyntheticData};
pub use report::{emit_report, read_report, svg_line_plot, MetricRow, RunReport, ELBO_FILE, METRICS_FILE, WEIGHTS_FILE};
pub use run::{aggregate, run_experiment, run_seed, strategies, SeedResult, Strategy};

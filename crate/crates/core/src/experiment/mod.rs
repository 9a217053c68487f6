//! Training runs, evaluation, grids and reports.

pub mod config;
pub mod grid;
pub mod report;
pub mod train;

pub use config::{Profile, RunConfig};
pub use grid::{desk_grid, grid, run_cached, run_grid, RunResult};
pub use train::{train, MetricRow, TrainOptions, TrainOutcome};

//! Monte Carlo experiments: ensembles, metrics, grid sweeps and CSV output.
//!
//! The harness works in `f64`; the estimation code underneath is generic.

pub mod ensemble;
pub mod metrics;
pub mod output;
pub mod seed;
pub mod sweep;

pub use ensemble::{
    gen_observation, gen_sensing_matrix, gen_signal, EnsembleSpec, Instance, ProfileScaling,
    SupportModel,
};
pub use metrics::{nmse, support_threshold};
pub use output::{write_cells_csv, write_matrix_stats_csv, write_minima_csv, write_trials_csv};
pub use seed::derive_seed;
pub use sweep::{
    matrix_draws, run_grid, Cell, CellSummary, GridSpec, MatrixDraw, Minimum, Seeding,
    SweepOptions, SweepResult, TrialRecord,
};

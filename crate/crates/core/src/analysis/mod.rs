//! Reproduction studies built on the estimators: ordering checks, hazard
//! ratio grids, the censoring-bias sweep, the Breslow limit and the
//! Kullback-Leibler characterization of the harmonic-mean effect.

mod breslow;
mod grid;
mod kl;
mod ordering;
pub mod report;
mod sweep;

pub use breslow::{
    breslow_limit, h_w0, h_w0_at_infinity, h_w0_at_zero, BreslowComparison, BreslowWindow, EmpiricalBreslowSpec,
};
pub use grid::{figure2_grid, grid_over, pct_difference, table1_grid, GridCell, GridResult, PairwiseDifferences};
pub use kl::{kl_gradient, kl_objective};
pub use ordering::{ordering_suite, proposition3_check, OrderingReport, ORDERING_TOL};
pub use report::RunManifest;
pub use sweep::{bias_sweep, percentile, Summary, SweepPoint, SweepResult};

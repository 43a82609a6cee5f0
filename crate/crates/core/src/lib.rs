//! Combined hazard ratios for pooled survival trials whose true per-trial
//! effects differ.
//!
//! The crate computes the competing definitions of an "overall" log hazard
//! ratio when two Cox-model trials are combined:
//!
//! - linear combinations of the per-trial estimates ([`combine::linear_log_hr`],
//!   [`combine::linear_hr`]),
//! - the limit of the pooled-data partial likelihood estimate, with and
//!   without administrative censoring ([`combine::solve_cpl_binary`],
//!   [`combine::solve_theta_pl_general`], [`combine::solve_censored_binary`]),
//!   and its aggregate-data plug-in estimate ([`combine::theta_m_estimate`]),
//! - the harmonic-mean effect, i.e. the Kullback-Leibler projection of the
//!   trial mixture onto a single proportional-hazards model, with its
//!   delta-method covariance and Wald test ([`combine::theta_hm_estimate`]).
//!
//! [`cox`] fits Cox models to patient-line data, [`data`] simulates mixture
//! scenarios and [`analysis`] reproduces the comparison studies.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod combine;
pub mod cox;
pub mod data;
pub mod error;
pub mod numerics;
mod serde_matrix;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

pub use combine::{BinaryDefinitions, CombinedEffect, Method, TrialAggregate, WaldResult, WeightScheme};
pub use cox::{BreslowCurve, CoxFit, CoxOptions};
pub use data::{
    Allocation, Baseline, CensoringScheme, CovariateDistribution, ScenarioSpec, SubjectRecord, SupportPoint,
    TrialDataset,
};
pub use error::{Error, Result};
pub use numerics::{QuadratureSpec, SolveReport};

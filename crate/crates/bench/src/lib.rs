//! Shared fixtures for the solver benchmarks.

use hrpool_core::data::{pool, CovariateDistribution, TrialDataset};
use hrpool_core::{Result, ScenarioSpec};

/// Pooled two-trial sample with hazard ratios 0.3 and 0.8 and 400/170 subjects.
pub fn pooled_example(seed: u64) -> Result<TrialDataset> {
    let spec = ScenarioSpec::two_arm(0.3, 0.8, [400, 170], 0.5, seed)?;
    pool(&spec.simulate(0))
}

/// Uniform law on the corners of the unit square.
pub fn unit_square() -> Result<CovariateDistribution> {
    CovariateDistribution::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])
}

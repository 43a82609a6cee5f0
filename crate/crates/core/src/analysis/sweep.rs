use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::theta_pl_limit;
use crate::cox::fit_cox;
use crate::data::{pool, ScenarioSpec};
use crate::error::{invalid, Result};

pub const MIN_REPLICATES: usize = 100;

/// Linear-interpolation percentile of sorted data (`prob` in [0, 1]).
pub fn percentile(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central 95% percentile interval of one estimator component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub successes: usize,
    pub failures: usize,
}

impl Summary {
    fn from_values(mut values: Vec<f64>, failures: usize) -> Self {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
                successes: 0,
                failures,
            };
        }
        values.sort_by(f64::total_cmp);
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: percentile(&values, 0.025),
            upper: percentile(&values, 0.975),
            successes: values.len(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Study end on the time scale; infinite means no administrative cut.
    pub t_max: f64,
    /// Mean pooled censored fraction over replicates.
    pub censored_fraction: f64,
    /// Per covariate component.
    pub theta_pl: Vec<Summary>,
    pub theta_m: Vec<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub replicates: usize,
    pub mixing_p: f64,
    /// Uncensored pooled limit at the scenario's true effects.
    pub theta_pl_limit: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

struct Outcome {
    pl: Option<Vec<f64>>,
    m: Option<Vec<f64>>,
    censored: f64,
}

fn replicate(scenario: &ScenarioSpec, stream: u64, grid: &[f64], p: f64) -> Vec<Outcome> {
    let latent = scenario.simulate_latent(stream);
    grid.iter()
        .map(|&t_max| {
            let trials: Vec<_> = latent.iter().map(|t| t.observe(t_max)).collect();
            let pooled = pool(&trials).expect("simulated trials share one covariate dimension");
            let pl = fit_cox(&pooled).ok().map(|f| f.beta_hat);
            let m = match (fit_cox(&trials[0]), fit_cox(&trials[1])) {
                (Ok(fa), Ok(fb)) => theta_pl_limit(&fa.beta_hat, &fb.beta_hat, p, &scenario.covariate_dist).ok(),
                _ => None,
            };
            Outcome {
                pl,
                m,
                censored: pooled.censored_fraction(),
            }
        })
        .collect()
}

fn summarize(outcomes: &[&Option<Vec<f64>>], k: usize) -> Vec<Summary> {
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    (0..k)
        .map(|j| {
            Summary::from_values(
                outcomes.iter().filter_map(|o| o.as_ref().map(|v| v[j])).collect(),
                failures,
            )
        })
        .collect()
}

/// Monte Carlo distribution of the pooled estimate and of the plug-in
/// estimate across study end times. Each replicate draws latent times once
/// on stream `r` and is observed at every `t_max`, so the grid points share
/// their samples. Fit failures are counted, not fatal.
pub fn bias_sweep(scenario: &ScenarioSpec, t_max_grid: &[f64], replicates: usize) -> Result<SweepResult> {
    scenario.validate()?;
    if scenario.sizes.len() != 2 {
        return invalid("the sweep compares exactly two trials");
    }
    if replicates < MIN_REPLICATES {
        return invalid(format!(
            "at least {MIN_REPLICATES} replicates are required, got {replicates}"
        ));
    }
    if t_max_grid.is_empty() || t_max_grid.iter().any(|t| !(*t > 0.0)) || t_max_grid.windows(2).any(|w| !(w[0] < w[1]))
    {
        return invalid("t_max grid must be non-empty, positive and strictly ascending");
    }
    let p = scenario.mixing_p();
    let k = scenario.covariate_dist.dim();
    let limit = theta_pl_limit(
        &scenario.trial_effects[0],
        &scenario.trial_effects[1],
        p,
        &scenario.covariate_dist,
    )?;
    let runs: Vec<Vec<Outcome>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| replicate(scenario, r, t_max_grid, p))
        .collect();
    let points = t_max_grid
        .iter()
        .enumerate()
        .map(|(g, &t_max)| {
            let at: Vec<&Outcome> = runs.iter().map(|run| &run[g]).collect();
            SweepPoint {
                t_max,
                censored_fraction: at.iter().map(|o| o.censored).sum::<f64>() / replicates as f64,
                theta_pl: summarize(&at.iter().map(|o| &o.pl).collect::<Vec<_>>(), k),
                theta_m: summarize(&at.iter().map(|o| &o.m).collect::<Vec<_>>(), k),
            }
        })
        .collect();
    Ok(SweepResult {
        seed: scenario.seed,
        replicates,
        mixing_p: p,
        theta_pl_limit: limit,
        points,
    })
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::binary_definitions;
use crate::error::{invalid, Result};

/// `100 · (first - second) / second`.
pub fn pct_difference(first: f64, second: f64) -> f64 {
    100.0 * (first - second) / second
}

/// Percentage differences between the four definitions, the second named
/// quantity being the basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDifferences {
    pub hm_vs_pl: f64,
    pub hm_vs_theta_l: f64,
    pub hm_vs_l: f64,
    pub pl_vs_theta_l: f64,
    pub pl_vs_l: f64,
    pub theta_l_vs_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub c_hm: f64,
    pub c_pl: f64,
    pub exp_theta_l: f64,
    pub c_l: f64,
    pub differences: PairwiseDifferences,
}

impl GridCell {
    pub fn compute(a: f64, b: f64, p: f64, q: f64) -> Result<Self> {
        let d = binary_definitions(a, b, p, q, None)?;
        Ok(GridCell {
            a,
            b,
            c_hm: d.c_hm,
            c_pl: d.c_pl,
            exp_theta_l: d.exp_theta_l,
            c_l: d.c_l,
            differences: PairwiseDifferences {
                hm_vs_pl: pct_difference(d.c_hm, d.c_pl),
                hm_vs_theta_l: pct_difference(d.c_hm, d.exp_theta_l),
                hm_vs_l: pct_difference(d.c_hm, d.c_l),
                pl_vs_theta_l: pct_difference(d.c_pl, d.exp_theta_l),
                pl_vs_l: pct_difference(d.c_pl, d.c_l),
                theta_l_vs_l: pct_difference(d.exp_theta_l, d.c_l),
            },
        })
    }
}

/// Cells in row-major order over (a, b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub p: f64,
    pub q: f64,
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn cell(&self, a: f64, b: f64) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| (c.a - a).abs() < 1e-12 && (c.b - b).abs() < 1e-12)
    }
}

/// Evaluates every `(a, b)` pair accepted by `keep`, in parallel but in input order.
pub fn grid_over(
    a_values: &[f64],
    b_values: &[f64],
    p: f64,
    q: f64,
    keep: impl Fn(f64, f64) -> bool + Sync,
) -> Result<GridResult> {
    let pairs: Vec<(f64, f64)> = a_values
        .iter()
        .flat_map(|&a| b_values.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| keep(a, b))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(a, b)| GridCell::compute(a, b, p, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridResult { p, q, cells })
}

/// The printed-table layout: `a ∈ {0.5, 1, 2}`, `b ∈ {0.5, …, 3}`, `b ≥ a`, `p = q = 1/2`.
pub fn table1_grid() -> Result<GridResult> {
    let a = [0.5, 1.0, 2.0];
    let b = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    grid_over(&a, &b, 0.5, 0.5, |a, b| b >= a)
}

fn axis(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi >= lo && step > 0.0) {
        return invalid(format!("invalid grid axis [{lo}, {hi}] step {step}"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Full rectangular grid at `p = q = 1/2`.
pub fn figure2_grid(a_range: (f64, f64), b_range: (f64, f64), step: f64) -> Result<GridResult> {
    grid_over(&axis(a_range, step)?, &axis(b_range, step)?, 0.5, 0.5, |_, _| true)
}

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{binary_definitions, SCALAR_ROOT_TOL};
use crate::data::stream_rng;
use crate::error::{invalid, Result};

/// Margins at or below this are not counted as strict.
pub const ORDERING_TOL: f64 = 10.0 * SCALAR_ROOT_TOL;

/// The two ordering chains
/// `a < c_HM < exp(θ_L) < c_L < b` and `a < c_PL < c_L < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
    pub c_hm: f64,
    pub exp_theta_l: f64,
    pub c_l: f64,
    pub c_pl: f64,
    /// `[c_HM - a, exp(θ_L) - c_HM, c_L - exp(θ_L), b - c_L]`.
    pub hm_margins: [f64; 4],
    /// `[c_PL - a, c_L - c_PL, b - c_L]`.
    pub pl_margins: [f64; 3],
    pub hm_chain_holds: bool,
    pub pl_chain_holds: bool,
    /// `a = b`: every margin is zero and neither chain can be strict.
    pub boundary: bool,
}

impl OrderingReport {
    pub fn holds(&self) -> bool {
        self.hm_chain_holds && self.pl_chain_holds
    }

    pub fn min_margin(&self) -> f64 {
        self.hm_margins
            .iter()
            .chain(&self.pl_margins)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn proposition3_check(a: f64, b: f64, p: f64, q: f64) -> Result<OrderingReport> {
    if !(a <= b) {
        return invalid(format!("ordering check needs a <= b (a = {a}, b = {b})"));
    }
    let d = binary_definitions(a, b, p, q, None)?;
    let hm_margins = [d.c_hm - a, d.exp_theta_l - d.c_hm, d.c_l - d.exp_theta_l, b - d.c_l];
    let pl_margins = [d.c_pl - a, d.c_l - d.c_pl, b - d.c_l];
    let boundary = a == b;
    let strict = |m: &[f64]| !boundary && m.iter().all(|&v| v > ORDERING_TOL);
    Ok(OrderingReport {
        a,
        b,
        p,
        q,
        c_hm: d.c_hm,
        exp_theta_l: d.exp_theta_l,
        c_l: d.c_l,
        c_pl: d.c_pl,
        hm_chain_holds: strict(&hm_margins),
        pl_chain_holds: strict(&pl_margins),
        hm_margins,
        pl_margins,
        boundary,
    })
}

/// `draws` random cases with `lo < a < b < hi` and `p, q ~ U(0.05, 0.95)`;
/// draw `i` uses stream `i` of `seed`.
pub fn ordering_suite(draws: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<OrderingReport>> {
    if !(0.0 < lo && lo < hi) {
        return invalid(format!("invalid hazard ratio range ({lo}, {hi})"));
    }
    (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let x: f64 = rng.random_range(lo..hi);
            let y: f64 = rng.random_range(lo..hi);
            let p = rng.random_range(0.05..0.95);
            let q = rng.random_range(0.05..0.95);
            proposition3_check(x.min(y), x.max(y), p, q)
        })
        .collect()
}

//! CSV result tables and the JSON run manifest.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BreslowComparison, GridResult, OrderingReport, SweepResult};
use crate::combine::{HM_NEWTON_TOL, PL_NEWTON_TOL, SCALAR_ROOT_TOL, SENSITIVITY_STEP};
use crate::cox::CoxOptions;
use crate::error::Result;
use crate::numerics::QuadratureSpec;

fn num(v: f64) -> String {
    format!("{v}")
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub fn write_grid_csv<W: Write>(grid: &GridResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "a",
        "b",
        "p",
        "q",
        "c_hm",
        "c_pl",
        "exp_theta_l",
        "c_l",
        "pct_hm_vs_pl",
        "pct_hm_vs_theta_l",
        "pct_hm_vs_l",
        "pct_pl_vs_theta_l",
        "pct_pl_vs_l",
        "pct_theta_l_vs_l",
    ])?;
    for c in &grid.cells {
        let d = c.differences;
        w.write_record(
            [
                c.a,
                c.b,
                grid.p,
                grid.q,
                c.c_hm,
                c.c_pl,
                c.exp_theta_l,
                c.c_l,
                d.hm_vs_pl,
                d.hm_vs_theta_l,
                d.hm_vs_l,
                d.pl_vs_theta_l,
                d.pl_vs_l,
                d.theta_l_vs_l,
            ]
            .map(num),
        )?;
    }
    finish(w)
}

/// One row per study end time and covariate component.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t_max",
        "component",
        "censored_fraction",
        "pl_mean",
        "pl_lower",
        "pl_upper",
        "pl_failures",
        "m_mean",
        "m_lower",
        "m_upper",
        "m_failures",
        "theta_pl_limit",
        "replicates",
        "seed",
    ])?;
    for pt in &sweep.points {
        for (j, (pl, m)) in pt.theta_pl.iter().zip(&pt.theta_m).enumerate() {
            w.write_record([
                num(pt.t_max),
                j.to_string(),
                num(pt.censored_fraction),
                num(pl.mean),
                num(pl.lower),
                num(pl.upper),
                pl.failures.to_string(),
                num(m.mean),
                num(m.lower),
                num(m.upper),
                m.failures.to_string(),
                num(sweep.theta_pl_limit[j]),
                sweep.replicates.to_string(),
                sweep.seed.to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn write_ordering_csv<W: Write>(reports: &[OrderingReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "a",
        "b",
        "p",
        "q",
        "c_hm",
        "exp_theta_l",
        "c_l",
        "c_pl",
        "min_margin",
        "hm_chain_holds",
        "pl_chain_holds",
        "boundary",
    ])?;
    for r in reports {
        let mut row: Vec<String> = [r.a, r.b, r.p, r.q, r.c_hm, r.exp_theta_l, r.c_l, r.c_pl, r.min_margin()]
            .map(num)
            .to_vec();
        row.extend([r.hm_chain_holds, r.pl_chain_holds, r.boundary].map(|b| b.to_string()));
        w.write_record(row)?;
    }
    finish(w)
}

pub fn write_breslow_curve_csv<W: Write>(cmp: &BreslowComparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "h_w0"])?;
    for (t, h) in cmp.t_grid.iter().zip(&cmp.analytic) {
        w.write_record([num(*t), num(*h)])?;
    }
    finish(w)
}

pub fn write_breslow_windows_csv<W: Write>(cmp: &BreslowComparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_start", "t_end", "events", "empirical", "analytic", "relative_error"])?;
    for win in cmp.empirical.iter().flat_map(|e| &e.windows) {
        w.write_record([
            num(win.t_start),
            num(win.t_end),
            win.events.to_string(),
            num(win.empirical),
            num(win.analytic),
            num(win.relative_error()),
        ])?;
    }
    finish(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub quadrature_rel: f64,
    pub quadrature_abs: f64,
    pub quadrature_tail_cut: f64,
    pub scalar_root: f64,
    pub pl_newton: f64,
    pub hm_newton: f64,
    pub cox_grad_per_event: f64,
    pub cox_step: f64,
    pub sensitivity_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        let c = CoxOptions::default();
        Tolerances {
            quadrature_rel: q.rel_tol,
            quadrature_abs: q.abs_tol,
            quadrature_tail_cut: q.tail_cut,
            scalar_root: SCALAR_ROOT_TOL,
            pl_newton: PL_NEWTON_TOL,
            hm_newton: HM_NEWTON_TOL,
            cox_grad_per_event: c.grad_tol,
            cox_step: c.step_tol,
            sensitivity_step: SENSITIVITY_STEP,
        }
    }
}

/// Everything needed to rerun a command. Deliberately omits the thread count,
/// which never affects results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Hex SHA-256 of the compact JSON form of `config`.
    pub config_sha256: String,
    pub tolerances: Tolerances,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let digest = Sha256::digest(serde_json::to_string(&config)?.as_bytes());
        Ok(RunManifest {
            tool: "hrpool".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            config_sha256: hex::encode(digest),
            tolerances: Tolerances::default(),
        })
    }
}

//! Cox proportional hazards fit by maximum partial likelihood (Breslow ties),
//! and the Breslow baseline cumulative hazard.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::numerics::{invert, solve_linear, SolveReport};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta_hat: Vec<f64>,
    /// Inverse observed information at `beta_hat`.
    #[serde(with = "crate::serde_matrix")]
    pub covariance: Matrix,
    pub log_partial_likelihood: f64,
    pub n_events: usize,
    pub report: SolveReport,
}

impl CoxFit {
    pub fn std_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Gradient tolerance per observed event.
    pub grad_tol: f64,
    pub step_tol: f64,
    /// `|beta|` beyond this is reported as a monotone likelihood.
    pub divergence_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iter: 100,
            max_halvings: 25,
            grad_tol: 1e-10,
            step_tol: 1e-8,
            divergence_bound: 50.0,
        }
    }
}

/// Records sorted by descending time with centred covariates.
struct RiskSets {
    k: usize,
    /// Row-major centred covariates in descending-time order.
    z: Vec<f64>,
    event: Vec<bool>,
    /// `[start, end)` ranges of tied times, latest first.
    groups: Vec<(usize, usize)>,
    n_events: usize,
}

impl RiskSets {
    fn new(data: &TrialDataset) -> Self {
        let subjects = data.subjects();
        let k = data.dim();
        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.sort_by(|&i, &j| subjects[j].time.total_cmp(&subjects[i].time));
        let n = subjects.len() as f64;
        let mut mean = vec![0.0; k];
        for s in subjects {
            for (m, v) in mean.iter_mut().zip(&s.covariates) {
                *m += v / n;
            }
        }
        let mut z = Vec::with_capacity(subjects.len() * k);
        let mut event = Vec::with_capacity(subjects.len());
        let mut groups = Vec::new();
        let mut start = 0;
        for (pos, &i) in order.iter().enumerate() {
            let s = &subjects[i];
            z.extend(s.covariates.iter().zip(&mean).map(|(v, m)| v - m));
            event.push(s.event);
            if pos > 0 && s.time != subjects[order[pos - 1]].time {
                groups.push((start, pos));
                start = pos;
            }
        }
        groups.push((start, order.len()));
        let n_events = event.iter().filter(|&&e| e).count();
        RiskSets {
            k,
            z,
            event,
            groups,
            n_events,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    /// Log partial likelihood, score and observed information at `beta`.
    fn evaluate(&self, beta: &[f64]) -> (f64, Vector, Matrix) {
        let k = self.k;
        let eta: Vec<f64> = (0..self.event.len())
            .map(|i| self.row(i).iter().zip(beta).map(|(z, b)| z * b).sum())
            .collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = Vector::zeros(k);
        let mut s2 = Matrix::zeros(k, k);
        let mut ll = 0.0;
        let mut grad = Vector::zeros(k);
        let mut info = Matrix::zeros(k, k);
        for &(start, end) in &self.groups {
            let mut deaths = 0.0;
            for i in start..end {
                let w = (eta[i] - shift).exp();
                let zi = self.row(i);
                s0 += w;
                for a in 0..k {
                    s1[a] += w * zi[a];
                    for b in 0..=a {
                        s2[(a, b)] += w * zi[a] * zi[b];
                    }
                }
                if self.event[i] {
                    deaths += 1.0;
                    ll += eta[i];
                    for a in 0..k {
                        grad[a] += zi[a];
                    }
                }
            }
            if deaths > 0.0 {
                ll -= deaths * (s0.ln() + shift);
                for a in 0..k {
                    let ma = s1[a] / s0;
                    grad[a] -= deaths * ma;
                    for b in 0..=a {
                        let v = deaths * (s2[(a, b)] / s0 - ma * s1[b] / s0);
                        info[(a, b)] += v;
                        if a != b {
                            info[(b, a)] += v;
                        }
                    }
                }
            }
        }
        (ll, grad, info)
    }
}

fn inf_norm(v: &Vector) -> f64 {
    v.amax()
}

pub fn fit_cox(data: &TrialDataset) -> Result<CoxFit> {
    fit_cox_with(data, &CoxOptions::default())
}

/// Newton-Raphson from `beta = 0` with step halving on the log partial likelihood.
pub fn fit_cox_with(data: &TrialDataset, opts: &CoxOptions) -> Result<CoxFit> {
    let k = data.dim();
    if k == 0 {
        return Err(Error::Degenerate("no covariates to fit".into()));
    }
    let rs = RiskSets::new(data);
    if rs.n_events == 0 {
        return Err(Error::Degenerate("no observed events".into()));
    }
    let grad_tol = opts.grad_tol * rs.n_events.max(1) as f64;
    let mut beta = vec![0.0; k];
    let (mut ll, mut grad, mut info) = rs.evaluate(&beta);
    let info_at_zero = info.diagonal();
    let mut iterations = 0;
    loop {
        let step = solve_linear(&info, &grad).map_err(|e| match e {
            Error::SingularMatrix => {
                Error::Degenerate("observed information is singular (no covariate contrast)".into())
            }
            other => other,
        })?;
        if inf_norm(&grad) <= grad_tol && step.amax() <= opts.step_tol {
            break;
        }
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: inf_norm(&grad),
            });
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = rs.evaluate(&cand);
            if eval.0.is_finite() && eval.0 >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, eval));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((cand, eval)) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                residual: inf_norm(&grad),
            });
        };
        if cand.iter().any(|b| b.abs() > opts.divergence_bound) {
            return Err(Error::Degenerate(format!(
                "coefficients exceed {} in magnitude (monotone likelihood)",
                opts.divergence_bound
            )));
        }
        beta = cand;
        (ll, grad, info) = eval;
    }
    // An underflowed score at huge coefficients looks stationary; the collapsed
    // information gives it away.
    if (0..k).any(|j| info[(j, j)] <= 1e-10 * info_at_zero[j]) {
        return Err(Error::Degenerate(
            "information vanished at the solution (monotone likelihood)".into(),
        ));
    }
    let mut covariance = invert(&info).map_err(|_| Error::Degenerate("observed information is singular".into()))?;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(CoxFit {
        beta_hat: beta.clone(),
        covariance,
        log_partial_likelihood: ll,
        n_events: rs.n_events,
        report: SolveReport {
            root: beta,
            residual_norm: inf_norm(&grad),
            iterations,
            converged: true,
        },
    })
}

/// Log partial likelihood (Breslow ties) at `beta`.
pub fn log_partial_likelihood(data: &TrialDataset, beta: &[f64]) -> Result<f64> {
    check_beta(data, beta)?;
    Ok(RiskSets::new(data).evaluate(beta).0)
}

/// Score vector at `beta`.
pub fn score(data: &TrialDataset, beta: &[f64]) -> Result<Vec<f64>> {
    check_beta(data, beta)?;
    Ok(RiskSets::new(data).evaluate(beta).1.iter().copied().collect())
}

fn check_beta(data: &TrialDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: beta.len(),
        });
    }
    Ok(())
}

/// Breslow step estimate of the baseline cumulative hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowCurve {
    pub event_times: Vec<f64>,
    pub event_counts: Vec<usize>,
    /// `Σ_{at risk} exp(beta'Z)` at each event time.
    pub risk_weight: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl BreslowCurve {
    /// `Ĥ₀(t)`, right-continuous.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        let n = self.event_times.partition_point(|&s| s <= t);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }
}

/// Increment at each distinct event time `t`: events at `t` over the
/// `exp(beta'Z)` mass at risk. An empty `beta` (no covariates) means all weights 1.
pub fn breslow_cumhaz(data: &TrialDataset, beta: &[f64]) -> Result<BreslowCurve> {
    check_beta(data, beta)?;
    let subjects = data.subjects();
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&i, &j| subjects[j].time.total_cmp(&subjects[i].time));
    let eta: Vec<f64> = subjects
        .iter()
        .map(|s| s.covariates.iter().zip(beta).map(|(z, b)| z * b).sum())
        .collect();
    let mut times = Vec::new();
    let mut counts = Vec::new();
    let mut weights = Vec::new();
    let mut at_risk = 0.0;
    let mut pos = 0;
    while pos < order.len() {
        let t = subjects[order[pos]].time;
        let mut deaths = 0;
        while pos < order.len() && subjects[order[pos]].time == t {
            let i = order[pos];
            at_risk += eta[i].exp();
            deaths += usize::from(subjects[i].event);
            pos += 1;
        }
        if deaths > 0 {
            times.push(t);
            counts.push(deaths);
            weights.push(at_risk);
        }
    }
    times.reverse();
    counts.reverse();
    weights.reverse();
    let increments: Vec<f64> = counts.iter().zip(&weights).map(|(&d, w)| d as f64 / w).collect();
    let cumulative = increments
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    Ok(BreslowCurve {
        event_times: times,
        event_counts: counts,
        risk_weight: weights,
        increments,
        cumulative,
    })
}

//! Definitions of the combined treatment effect for two pooled trials and
//! their estimators.
//!
//! Conventions: `alpha`, `beta` are the per-trial log hazard ratio vectors,
//! `a = e^alpha`, `b = e^beta` their hazard ratios in the arm-indicator case,
//! `p` the first trial's share of the pooled sample and `q = P(Z = 1)`.
//! Every limit is expressed on the cumulative-hazard scale `u = H₀(t)`, so
//! none of them depends on the baseline hazard.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cox::CoxFit;
use crate::data::CovariateDistribution;
use crate::error::{invalid, Error, Result};
use crate::numerics::{brent_root, integrate_interval, newton_nd, solve_linear, QuadratureSpec};
use crate::{Matrix, Vector};

/// Residual tolerance for the scalar root solves.
pub const SCALAR_ROOT_TOL: f64 = 1e-12;
/// `‖F‖∞` tolerance for the quadrature-based vector solve.
pub const PL_NEWTON_TOL: f64 = 1e-10;
/// `‖F‖∞` tolerance for the finite-sum harmonic-mean solve.
pub const HM_NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 100;
/// Central-difference step for the sensitivities of the pooled-limit solution.
pub const SENSITIVITY_STEP: f64 = 1e-5;

/// Per-trial summary available without patient-line data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    #[serde(default)]
    pub label: String,
    pub beta_hat: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub covariance: Matrix,
    #[serde(rename = "n")]
    pub size: usize,
}

impl TrialAggregate {
    pub fn new(label: impl Into<String>, beta_hat: Vec<f64>, covariance: Matrix, size: usize) -> Result<Self> {
        let agg = TrialAggregate {
            label: label.into(),
            beta_hat,
            covariance,
            size,
        };
        agg.validate()?;
        Ok(agg)
    }

    pub fn from_fit(label: impl Into<String>, fit: &CoxFit, size: usize) -> Self {
        TrialAggregate {
            label: label.into(),
            beta_hat: fit.beta_hat.clone(),
            covariance: fit.covariance.clone(),
            size,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if self.covariance.nrows() != k || self.covariance.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.covariance.nrows(),
            });
        }
        if self.size == 0 {
            return invalid(format!("trial `{}` has zero size", self.label));
        }
        if self
            .beta_hat
            .iter()
            .chain(self.covariance.iter())
            .any(|v| !v.is_finite())
        {
            return invalid(format!("trial `{}` has non-finite estimates", self.label));
        }
        let scale = self.covariance.amax().max(f64::MIN_POSITIVE);
        if (&self.covariance - self.covariance.transpose()).amax() > 1e-10 * scale {
            return invalid(format!("covariance of trial `{}` is not symmetric", self.label));
        }
        if k > 0 {
            let eig = self.covariance.clone().symmetric_eigen();
            if eig.eigenvalues.min() < -1e-10 * scale {
                return invalid(format!(
                    "covariance of trial `{}` is not positive semidefinite",
                    self.label
                ));
            }
        }
        Ok(())
    }
}

fn check_aggregates(aggs: &[TrialAggregate], exact: Option<usize>) -> Result<usize> {
    match exact {
        Some(n) if aggs.len() != n => return invalid(format!("expected exactly {n} trials, got {}", aggs.len())),
        None if aggs.len() < 2 => return invalid("at least two trials are required"),
        _ => {}
    }
    let k = aggs[0].dim();
    for a in aggs {
        a.validate()?;
        if a.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: a.dim(),
            });
        }
    }
    Ok(k)
}

/// Aggregate-input file: per-trial summaries plus the covariate law used by
/// the limit-based estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatesFile {
    pub trials: Vec<TrialAggregate>,
    pub covariate_distribution: CovariateDistribution,
}

impl AggregatesFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: AggregatesFile = serde_json::from_str(text)?;
        check_aggregates(&file.trials, None)?;
        if file.covariate_distribution.dim() != file.trials[0].dim() {
            return Err(Error::DimensionMismatch {
                expected: file.trials[0].dim(),
                found: file.covariate_distribution.dim(),
            });
        }
        Ok(file)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Weights for linear combinations of trial estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weights", rename_all = "snake_case")]
pub enum WeightScheme {
    InverseVariance,
    SizeProportional,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LinearLog,
    #[serde(rename = "linear_hr")]
    LinearHR,
    #[serde(rename = "pooled_mple")]
    PooledMPLE,
    Misspecified,
    HarmonicMean,
}

/// A combined estimate. `estimate` is on the log-HR scale except for
/// [`Method::LinearHR`], which is on the HR scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEffect {
    pub method: Method,
    pub estimate: Vec<f64>,
    #[serde(with = "crate::serde_matrix::option", default)]
    pub covariance: Option<Matrix>,
    pub mixing_p: f64,
}

impl CombinedEffect {
    /// Estimate on the hazard-ratio scale.
    pub fn hazard_ratio(&self) -> Vec<f64> {
        match self.method {
            Method::LinearHR => self.estimate.clone(),
            _ => self.estimate.iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub p_value: f64,
    pub null_value: f64,
}

/// First trial's share of the pooled sample.
pub fn mixing_proportion(aggs: &[TrialAggregate]) -> f64 {
    aggs[0].size as f64 / aggs.iter().map(|a| a.size).sum::<usize>() as f64
}

fn check_custom(w: &[f64], m: usize) -> Result<()> {
    if w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: w.len(),
        });
    }
    if w.iter().any(|v| !(*v > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return invalid("custom weights must be positive and sum to 1");
    }
    Ok(())
}

/// `weights[i][j]`: weight of trial `i` in component `j`.
fn component_weights(aggs: &[TrialAggregate], scheme: &WeightScheme, k: usize) -> Result<Vec<Vec<f64>>> {
    let m = aggs.len();
    match scheme {
        WeightScheme::SizeProportional => {
            let total: usize = aggs.iter().map(|a| a.size).sum();
            Ok(aggs.iter().map(|a| vec![a.size as f64 / total as f64; k]).collect())
        }
        WeightScheme::Custom(w) => {
            check_custom(w, m)?;
            Ok(w.iter().map(|&wi| vec![wi; k]).collect())
        }
        WeightScheme::InverseVariance => {
            let mut w = vec![vec![0.0; k]; m];
            for j in 0..k {
                let mut total = 0.0;
                for (i, a) in aggs.iter().enumerate() {
                    let v = a.covariance[(j, j)];
                    if !(v > 0.0) {
                        return Err(Error::SingularVariance { trial: i, component: j });
                    }
                    w[i][j] = 1.0 / v;
                    total += 1.0 / v;
                }
                for row in w.iter_mut() {
                    row[j] /= total;
                }
            }
            Ok(w)
        }
    }
}

/// Weighted average of the log hazard ratios, componentwise; trials independent.
pub fn linear_log_hr(aggs: &[TrialAggregate], scheme: &WeightScheme) -> Result<CombinedEffect> {
    let k = check_aggregates(aggs, None)?;
    let w = component_weights(aggs, scheme, k)?;
    let mut estimate = vec![0.0; k];
    let mut cov = Matrix::zeros(k, k);
    for (a, wi) in aggs.iter().zip(&w) {
        for j in 0..k {
            estimate[j] += wi[j] * a.beta_hat[j];
            for l in 0..k {
                cov[(j, l)] += wi[j] * wi[l] * a.covariance[(j, l)];
            }
        }
    }
    Ok(CombinedEffect {
        method: Method::LinearLog,
        estimate,
        covariance: Some(cov),
        mixing_p: mixing_proportion(aggs),
    })
}

/// Weighted average of the hazard ratios `e^{beta_i'z}` at covariate value `z`.
///
/// Inverse-variance weights use the variance of `beta_i'z`.
pub fn linear_hr(aggs: &[TrialAggregate], scheme: &WeightScheme, z: &[f64]) -> Result<CombinedEffect> {
    let k = check_aggregates(aggs, None)?;
    if z.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: z.len(),
        });
    }
    let zv = Vector::from_column_slice(z);
    let lin_var: Vec<f64> = aggs
        .iter()
        .map(|a| (zv.transpose() * &a.covariance * &zv)[(0, 0)])
        .collect();
    let weights: Vec<f64> = match scheme {
        WeightScheme::SizeProportional => {
            let total: usize = aggs.iter().map(|a| a.size).sum();
            aggs.iter().map(|a| a.size as f64 / total as f64).collect()
        }
        WeightScheme::Custom(w) => {
            check_custom(w, aggs.len())?;
            w.clone()
        }
        WeightScheme::InverseVariance => {
            if let Some(i) = lin_var.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::SingularVariance { trial: i, component: 0 });
            }
            let total: f64 = lin_var.iter().map(|v| 1.0 / v).sum();
            lin_var.iter().map(|v| 1.0 / v / total).collect()
        }
    };
    let mut value = 0.0;
    let mut var = 0.0;
    for ((a, w), v) in aggs.iter().zip(&weights).zip(&lin_var) {
        let hr = dot(&a.beta_hat, z).exp();
        value += w * hr;
        var += w * w * hr * hr * v;
    }
    Ok(CombinedEffect {
        method: Method::LinearHR,
        estimate: vec![value],
        covariance: Some(Matrix::from_element(1, 1, var)),
        mixing_p: mixing_proportion(aggs),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_binary(a: f64, b: f64, p: f64, q: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return invalid(format!("hazard ratios must be positive and finite (a = {a}, b = {b})"));
    }
    check_unit("p", p)?;
    check_unit("q", q)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        invalid(format!("{name} = {v} must lie in (0, 1)"))
    }
}

/// Integrand of the arm-indicator pooled-limit equation at hazard ratio `c`:
///
/// `[(1-q)e^{-u} + pq a e^{-au} + (1-p)q b e^{-bu}] / [(1-q)e^{-u} + pq c e^{-au} + (1-p)q c e^{-bu}] · e^{-u}`.
pub fn cpl_integrand(a: f64, b: f64, p: f64, q: f64, c: f64, u: f64) -> f64 {
    // Rescale every exponential by e^{m u} to keep the ratio finite for large u.
    let m = a.min(b).min(1.0);
    let e0 = (-(1.0 - m) * u).exp();
    let ea = (-(a - m) * u).exp();
    let eb = (-(b - m) * u).exp();
    let num = (1.0 - q) * e0 + p * q * a * ea + (1.0 - p) * q * b * eb;
    let den = (1.0 - q) * e0 + p * q * c * ea + (1.0 - p) * q * c * eb;
    num / den * (-u).exp()
}

/// `∫_0^H g(u|c) du - (1 - e^{-H})`; strictly decreasing in `c`. `H = ∞` is the
/// uncensored equation.
pub fn cpl_residual(a: f64, b: f64, p: f64, q: f64, c: f64, h: f64) -> Result<f64> {
    let spec = QuadratureSpec::default();
    let upper = h.min(spec.tail_cut);
    let lhs = if h.is_finite() { -(-h).exp_m1() } else { 1.0 };
    let integral = integrate_interval(|u| cpl_integrand(a, b, p, q, c, u), 0.0, upper, &spec)?;
    Ok(integral - lhs)
}

fn solve_binary_limit(a: f64, b: f64, p: f64, q: f64, h: f64) -> Result<f64> {
    check_binary(a, b, p, q)?;
    if a == b {
        return Ok(a);
    }
    let (lo, hi) = (a.min(b), a.max(b));
    let report = brent_root(|c| cpl_residual(a, b, p, q, c, h), lo, hi, SCALAR_ROOT_TOL)?;
    Ok(report.scalar())
}

/// Limit `c*_PL` of the pooled partial likelihood hazard ratio for an arm
/// indicator covariate and no censoring. Lies in `[min(a,b), max(a,b)]`.
pub fn solve_cpl_binary(a: f64, b: f64, p: f64, q: f64) -> Result<f64> {
    solve_binary_limit(a, b, p, q, f64::INFINITY)
}

/// Limit of the pooled estimate when both trials stop at `T_max`, with
/// `h = H₀(T_max)`.
pub fn solve_censored_binary(a: f64, b: f64, p: f64, q: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return invalid(format!("cumulative hazard at study end must be positive, got {h}"));
    }
    solve_binary_limit(a, b, p, q, h)
}

struct Tabulated {
    prob: Vec<f64>,
    z: Vec<Vec<f64>>,
    rate_a: Vec<f64>,
    rate_b: Vec<f64>,
    mean: Vec<f64>,
}

impl Tabulated {
    fn new(alpha: &[f64], beta: &[f64], dist: &CovariateDistribution) -> Result<Self> {
        let k = dist.dim();
        for v in [alpha, beta] {
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: v.len(),
                });
            }
        }
        let pts = dist.support();
        Ok(Tabulated {
            prob: pts.iter().map(|s| s.prob).collect(),
            z: pts.iter().map(|s| s.z.clone()).collect(),
            rate_a: pts.iter().map(|s| dot(alpha, &s.z).exp()).collect(),
            rate_b: pts.iter().map(|s| dot(beta, &s.z).exp()).collect(),
            mean: dist.mean(),
        })
    }

    fn min_rate(&self) -> f64 {
        self.rate_a
            .iter()
            .chain(&self.rate_b)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn k(&self) -> usize {
        self.mean.len()
    }
}

/// Residual of the uncensored pooled-limit equation for general covariates:
/// `∫ [p E(e^{θ'Z - e^{α'Z}u} Z) + (1-p) E(…β…Z)] / [p E(e^{θ'Z - e^{α'Z}u}) + (1-p) E(…β…)]
///   · [p E(e^{α'Z} e^{-e^{α'Z}u}) + (1-p) E(e^{β'Z} e^{-e^{β'Z}u})] du - E(Z)`.
pub fn theta_pl_residual(
    theta: &[f64],
    alpha: &[f64],
    beta: &[f64],
    p: f64,
    dist: &CovariateDistribution,
) -> Result<Vec<f64>> {
    let tab = Tabulated::new(alpha, beta, dist)?;
    if theta.len() != tab.k() {
        return Err(Error::DimensionMismatch {
            expected: tab.k(),
            found: theta.len(),
        });
    }
    pl_residual(&tab, theta, p)
}

fn pl_residual(tab: &Tabulated, theta: &[f64], p: f64) -> Result<Vec<f64>> {
    let m = tab.min_rate();
    let spec = QuadratureSpec::default();
    // The slowest-decaying density term is e^{-m u}; extend the cut accordingly.
    let upper = spec.tail_cut / m.clamp(1e-300, 1.0);
    let weight: Vec<f64> = tab.z.iter().map(|z| dot(theta, z).exp()).collect();
    let mut out = Vec::with_capacity(tab.k());
    for j in 0..tab.k() {
        let integrand = |u: f64| {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut density = 0.0;
            for i in 0..tab.prob.len() {
                let sa = (-(tab.rate_a[i] - m) * u).exp();
                let sb = (-(tab.rate_b[i] - m) * u).exp();
                let mix = p * sa + (1.0 - p) * sb;
                num += tab.prob[i] * weight[i] * tab.z[i][j] * mix;
                den += tab.prob[i] * weight[i] * mix;
                density += tab.prob[i] * (p * tab.rate_a[i] * sa + (1.0 - p) * tab.rate_b[i] * sb);
            }
            num / den * density * (-m * u).exp()
        };
        let v = integrate_interval(integrand, 0.0, upper, &spec)?;
        out.push(v - tab.mean[j]);
    }
    Ok(out)
}

fn check_p(p: f64) -> Result<()> {
    check_unit("p", p)
}

/// Limit `θ*_PL` of the pooled partial likelihood estimate for a general
/// finite covariate law, by damped Newton from `p·α + (1-p)·β`.
pub fn solve_theta_pl_general(alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> Result<Vec<f64>> {
    check_p(p)?;
    let tab = Tabulated::new(alpha, beta, dist)?;
    let x0: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| p * a + (1.0 - p) * b).collect();
    let report = newton_nd(|th| pl_residual(&tab, th, p), &x0, PL_NEWTON_TOL, NEWTON_MAX_ITER)?;
    Ok(report.root)
}

/// `θ*_PL` using the scalar solver when the law is the arm indicator on `{0,1}`.
pub fn theta_pl_limit(alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> Result<Vec<f64>> {
    match dist.binary_arm_prob() {
        Some(q) if alpha.len() == 1 && beta.len() == 1 => {
            Ok(vec![solve_cpl_binary(alpha[0].exp(), beta[0].exp(), p, q)?.ln()])
        }
        _ => solve_theta_pl_general(alpha, beta, p, dist),
    }
}

fn block_sandwich(jac: &Matrix, var_a: &Matrix, var_b: &Matrix) -> Matrix {
    let k = var_a.nrows();
    let mut block = Matrix::zeros(2 * k, 2 * k);
    block.view_mut((0, 0), (k, k)).copy_from(var_a);
    block.view_mut((k, k), (k, k)).copy_from(var_b);
    let cov = jac * block * jac.transpose();
    (&cov + cov.transpose()) * 0.5
}

/// `∂θ*_PL / ∂(α, β)` (k × 2k) by central differences of the solver output.
pub fn theta_m_sensitivities(alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> Result<Matrix> {
    let k = alpha.len();
    let mut jac = Matrix::zeros(k, 2 * k);
    let mut inputs: Vec<f64> = alpha.iter().chain(beta).copied().collect();
    for col in 0..2 * k {
        let orig = inputs[col];
        inputs[col] = orig + SENSITIVITY_STEP;
        let plus = theta_pl_limit(&inputs[..k], &inputs[k..], p, dist)?;
        inputs[col] = orig - SENSITIVITY_STEP;
        let minus = theta_pl_limit(&inputs[..k], &inputs[k..], p, dist)?;
        inputs[col] = orig;
        for r in 0..k {
            jac[(r, col)] = (plus[r] - minus[r]) / (2.0 * SENSITIVITY_STEP);
        }
    }
    Ok(jac)
}

/// Plug-in estimate `θ̂_M`: the pooled-limit equation evaluated at the two
/// trials' estimates, with a delta-method covariance.
pub fn theta_m_estimate(aggs: &[TrialAggregate], dist: &CovariateDistribution) -> Result<CombinedEffect> {
    let k = check_aggregates(aggs, Some(2))?;
    if dist.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: dist.dim(),
        });
    }
    let p = mixing_proportion(aggs);
    let (alpha, beta) = (&aggs[0].beta_hat, &aggs[1].beta_hat);
    let estimate = theta_pl_limit(alpha, beta, p, dist)?;
    let jac = theta_m_sensitivities(alpha, beta, p, dist)?;
    Ok(CombinedEffect {
        method: Method::Misspecified,
        estimate,
        covariance: Some(block_sandwich(&jac, &aggs[0].covariance, &aggs[1].covariance)),
        mixing_p: p,
    })
}

/// Harmonic-mean hazard ratio `1 / (p/a + (1-p)/b)`.
pub fn c_hm_binary(a: f64, b: f64, p: f64) -> f64 {
    1.0 / (p / a + (1.0 - p) / b)
}

/// `E[e^{θ'Z} Z (p e^{-α'Z} + (1-p) e^{-β'Z})] - E(Z)`.
pub fn theta_hm_residual(
    theta: &[f64],
    alpha: &[f64],
    beta: &[f64],
    p: f64,
    dist: &CovariateDistribution,
) -> Result<Vec<f64>> {
    let tab = Tabulated::new(alpha, beta, dist)?;
    if theta.len() != tab.k() {
        return Err(Error::DimensionMismatch {
            expected: tab.k(),
            found: theta.len(),
        });
    }
    Ok(hm_residual(&tab, theta, p))
}

fn hm_residual(tab: &Tabulated, theta: &[f64], p: f64) -> Vec<f64> {
    let mut out: Vec<f64> = tab.mean.iter().map(|m| -m).collect();
    for i in 0..tab.prob.len() {
        let w = tab.prob[i] * dot(theta, &tab.z[i]).exp() * (p / tab.rate_a[i] + (1.0 - p) / tab.rate_b[i]);
        for (o, z) in out.iter_mut().zip(&tab.z[i]) {
            *o += w * z;
        }
    }
    out
}

/// Harmonic-mean combined effect `θ*_HM` for a general finite covariate law.
pub fn solve_theta_hm_general(alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> Result<Vec<f64>> {
    check_p(p)?;
    let tab = Tabulated::new(alpha, beta, dist)?;
    let x0: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| p * a + (1.0 - p) * b).collect();
    let scale = tab.mean.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let report = newton_nd(
        |th| Ok(hm_residual(&tab, th, p)),
        &x0,
        HM_NEWTON_TOL * scale,
        NEWTON_MAX_ITER,
    )?;
    Ok(report.root)
}

/// `∂θ*_HM / ∂(α, β)` (k × 2k) from the implicit-function linear systems
/// `E[e^{θ'Z} w(Z) Z Z'] ∂_jθ = E[e^{θ'Z} Z p Z_j e^{-α'Z}]` (and likewise for β),
/// where `w(Z) = p e^{-α'Z} + (1-p) e^{-β'Z}`.
pub fn theta_hm_sensitivities(
    theta: &[f64],
    alpha: &[f64],
    beta: &[f64],
    p: f64,
    dist: &CovariateDistribution,
) -> Result<Matrix> {
    let tab = Tabulated::new(alpha, beta, dist)?;
    let k = tab.k();
    let mut lhs = Matrix::zeros(k, k);
    let mut rhs = Matrix::zeros(k, 2 * k);
    for i in 0..tab.prob.len() {
        let base = tab.prob[i] * dot(theta, &tab.z[i]).exp();
        let wa = p / tab.rate_a[i];
        let wb = (1.0 - p) / tab.rate_b[i];
        let z = &tab.z[i];
        for r in 0..k {
            for c in 0..k {
                lhs[(r, c)] += base * (wa + wb) * z[r] * z[c];
                rhs[(r, c)] += base * wa * z[r] * z[c];
                rhs[(r, k + c)] += base * wb * z[r] * z[c];
            }
        }
    }
    let mut jac = Matrix::zeros(k, 2 * k);
    for col in 0..2 * k {
        let x = solve_linear(&lhs, &rhs.column(col).into_owned())?;
        jac.set_column(col, &x);
    }
    Ok(jac)
}

/// Delta-method variance of `θ̂_HM` for an arm indicator:
/// `[p² e^{-2α} Var(α) + (1-p)² e^{-2β} Var(β)] / (p e^{-α} + (1-p) e^{-β})²`.
pub fn var_theta_hm_binary(alpha_hat: f64, beta_hat: f64, var_a: f64, var_b: f64, p: f64) -> f64 {
    let wa = p * (-alpha_hat).exp();
    let wb = (1.0 - p) * (-beta_hat).exp();
    (wa * wa * var_a + wb * wb * var_b) / (wa + wb).powi(2)
}

/// Delta-method covariance of `θ̂_HM` for two trials.
pub fn var_theta_hm_general(aggs: &[TrialAggregate], dist: &CovariateDistribution) -> Result<Matrix> {
    Ok(theta_hm_estimate(aggs, dist)?
        .covariance
        .expect("harmonic-mean effect carries a covariance"))
}

/// `θ̂_HM` from two trials' estimates, with delta-method covariance.
pub fn theta_hm_estimate(aggs: &[TrialAggregate], dist: &CovariateDistribution) -> Result<CombinedEffect> {
    let k = check_aggregates(aggs, Some(2))?;
    if dist.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: dist.dim(),
        });
    }
    let p = mixing_proportion(aggs);
    let (alpha, beta) = (&aggs[0].beta_hat, &aggs[1].beta_hat);
    let theta = solve_theta_hm_general(alpha, beta, p, dist)?;
    let jac = theta_hm_sensitivities(&theta, alpha, beta, p, dist)?;
    Ok(CombinedEffect {
        method: Method::HarmonicMean,
        estimate: theta,
        covariance: Some(block_sandwich(&jac, &aggs[0].covariance, &aggs[1].covariance)),
        mixing_p: p,
    })
}

/// The pooled-data partial likelihood estimate as a combined effect.
pub fn pooled_effect(fit: &CoxFit, mixing_p: f64) -> CombinedEffect {
    CombinedEffect {
        method: Method::PooledMPLE,
        estimate: fit.beta_hat.clone(),
        covariance: Some(fit.covariance.clone()),
        mixing_p,
    }
}

/// Two-sided Wald test of `estimate[component] = null_value`.
pub fn wald_test(effect: &CombinedEffect, null_value: f64, component: usize) -> Result<WaldResult> {
    if component >= effect.estimate.len() {
        return invalid(format!(
            "component {component} out of range for a {}-dimensional effect",
            effect.estimate.len()
        ));
    }
    let var = effect
        .covariance
        .as_ref()
        .map(|c| c[(component, component)])
        .ok_or(Error::MissingVariance(component))?;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::MissingVariance(component));
    }
    let statistic = (effect.estimate[component] - null_value) / var.sqrt();
    Ok(WaldResult {
        statistic,
        p_value: erfc(statistic.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0),
        null_value,
    })
}

/// All hazard-ratio-scale definitions for an arm-indicator covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryDefinitions {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
    /// Harmonic mean `1 / (p/a + (1-p)/b)`.
    pub c_hm: f64,
    /// Uncensored pooled partial likelihood limit.
    pub c_pl: f64,
    /// Geometric mean `a^p b^{1-p}`, i.e. `exp(pα + (1-p)β)`.
    pub exp_theta_l: f64,
    /// Arithmetic mean `pa + (1-p)b`.
    pub c_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_hazard_at_end: Option<f64>,
    /// Pooled limit under administrative censoring at `H₀(T_max)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_censored: Option<f64>,
}

pub fn binary_definitions(a: f64, b: f64, p: f64, q: f64, h: Option<f64>) -> Result<BinaryDefinitions> {
    check_binary(a, b, p, q)?;
    Ok(BinaryDefinitions {
        a,
        b,
        p,
        q,
        c_hm: c_hm_binary(a, b, p),
        c_pl: solve_cpl_binary(a, b, p, q)?,
        exp_theta_l: (p * a.ln() + (1.0 - p) * b.ln()).exp(),
        c_l: p * a + (1.0 - p) * b,
        cumulative_hazard_at_end: h,
        c_censored: h.map(|h| solve_censored_binary(a, b, p, q, h)).transpose()?,
    })
}

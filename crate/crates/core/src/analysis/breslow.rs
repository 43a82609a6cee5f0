use serde::{Deserialize, Serialize};

use crate::cox::{breslow_cumhaz, fit_cox};
use crate::data::{pool, ScenarioSpec};
use crate::error::{invalid, Result};
use crate::numerics::{integrate_interval, QuadratureSpec};

/// Hazard underlying the limit of the pooled Breslow estimate when both
/// trials randomize 1:1 and the control hazard is 1:
/// `[p a e^{-at} + (1-p) b e^{-bt} + e^{-t}] / [(p e^{-at} + (1-p) e^{-bt}) c + e^{-t}]`.
pub fn h_w0(a: f64, b: f64, p: f64, c_star: f64, t: f64) -> f64 {
    let m = a.min(b).min(1.0);
    let ea = (-(a - m) * t).exp();
    let eb = (-(b - m) * t).exp();
    let e1 = (-(1.0 - m) * t).exp();
    (p * a * ea + (1.0 - p) * b * eb + e1) / ((p * ea + (1.0 - p) * eb) * c_star + e1)
}

pub fn h_w0_at_zero(a: f64, b: f64, p: f64, c_star: f64) -> f64 {
    (p * a + (1.0 - p) * b + 1.0) / (c_star + 1.0)
}

/// Limit as `t → ∞`: only the slowest-decaying group survives in the risk
/// set, e.g. `a / c*` when `a < b` and `a < 1`.
pub fn h_w0_at_infinity(a: f64, b: f64, p: f64, c_star: f64) -> f64 {
    let m = a.min(b).min(1.0);
    let (mut num, mut den) = (0.0, 0.0);
    if a == m {
        num += p * a;
        den += p * c_star;
    }
    if b == m {
        num += (1.0 - p) * b;
        den += (1.0 - p) * c_star;
    }
    if m == 1.0 {
        num += 1.0;
        den += 1.0;
    }
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBreslowSpec {
    /// Pooled subjects, split `p : 1-p` between the trials.
    pub sample_size: usize,
    /// Events per smoothing window.
    pub window_events: usize,
    /// Windows cover `[0, horizon]`.
    pub horizon: f64,
    pub seed: u64,
}

/// Average Breslow hazard over one window next to the analytic average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreslowWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub events: usize,
    pub empirical: f64,
    pub analytic: f64,
}

impl BreslowWindow {
    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.analytic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBreslow {
    pub spec: EmpiricalBreslowSpec,
    pub fitted_log_hr: f64,
    pub windows: Vec<BreslowWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowComparison {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub c_star: f64,
    pub t_grid: Vec<f64>,
    pub analytic: Vec<f64>,
    pub at_zero: f64,
    pub at_infinity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalBreslow>,
}

pub fn breslow_limit(a: f64, b: f64, p: f64, c_star: f64, t_grid: &[f64]) -> Result<BreslowComparison> {
    if !(a > 0.0 && b > 0.0 && c_star > 0.0) || !(p > 0.0 && p < 1.0) {
        return invalid("hazard ratios must be positive and p in (0, 1)");
    }
    if t_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return invalid("time grid must be finite and non-negative");
    }
    Ok(BreslowComparison {
        a,
        b,
        p,
        c_star,
        t_grid: t_grid.to_vec(),
        analytic: t_grid.iter().map(|&t| h_w0(a, b, p, c_star, t)).collect(),
        at_zero: h_w0_at_zero(a, b, p, c_star),
        at_infinity: h_w0_at_infinity(a, b, p, c_star),
        empirical: None,
    })
}

impl BreslowComparison {
    /// Simulates the four exponential groups, fits the pooled working model and
    /// averages the Breslow increments over windows of `window_events` events.
    pub fn with_empirical(mut self, spec: EmpiricalBreslowSpec) -> Result<Self> {
        if spec.window_events == 0 || !(spec.horizon > 0.0) || spec.sample_size < 4 {
            return invalid("empirical comparison needs a positive window, horizon and sample size");
        }
        let n1 = (self.p * spec.sample_size as f64).round() as usize;
        let scenario = ScenarioSpec::two_arm(self.a, self.b, [n1, spec.sample_size - n1], 0.5, spec.seed)?;
        let pooled = pool(&scenario.simulate(0))?;
        let fit = fit_cox(&pooled)?;
        let curve = breslow_cumhaz(&pooled, &fit.beta_hat)?;
        let quad = QuadratureSpec::default();
        let h = |t: f64| h_w0(self.a, self.b, self.p, self.c_star, t);

        // Window ends as (time, cumulative hazard, events); a remainder shorter
        // than half a window is folded into the last full one.
        let mut ends: Vec<(f64, f64, usize)> = Vec::new();
        let mut events = 0;
        for (i, &t) in curve.event_times.iter().enumerate() {
            if t > spec.horizon {
                break;
            }
            events += curve.event_counts[i];
            if events >= spec.window_events {
                ends.push((t, curve.cumulative[i], events));
                events = 0;
            }
        }
        if events > 0 {
            let tail = (spec.horizon, curve.cumulative_at(spec.horizon), events);
            match ends.last_mut() {
                Some(last) if 2 * events < spec.window_events => *last = (tail.0, tail.1, last.2 + events),
                _ => ends.push(tail),
            }
        }
        let mut windows = Vec::with_capacity(ends.len());
        let (mut t_start, mut h_start) = (0.0, 0.0);
        for (t_end, h_end, events) in ends {
            let width = t_end - t_start;
            windows.push(BreslowWindow {
                t_start,
                t_end,
                events,
                empirical: (h_end - h_start) / width,
                analytic: integrate_interval(h, t_start, t_end, &quad)? / width,
            });
            (t_start, h_start) = (t_end, h_end);
        }
        self.empirical = Some(EmpiricalBreslow {
            spec,
            fitted_log_hr: fit.beta_hat[0],
            windows,
        });
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combine::solve_cpl_binary;

    #[test]
    fn endpoints_match_curve() {
        let c = solve_cpl_binary(0.5, 1.0, 0.5, 0.5).unwrap();
        assert!((h_w0(0.5, 1.0, 0.5, c, 0.0) - h_w0_at_zero(0.5, 1.0, 0.5, c)).abs() < 1e-15);
        assert!((h_w0(0.5, 1.0, 0.5, c, 200.0) - 0.5 / c).abs() < 1e-12);
        assert!((h_w0_at_infinity(0.5, 1.0, 0.5, c) - 0.5 / c).abs() < 1e-15);
        assert!((h_w0(0.5, 1.0, 0.5, c, 1e4) - 0.5 / c).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_is_flat() {
        for t in [0.0, 0.3, 5.0, 80.0] {
            assert!((h_w0(0.7, 0.7, 0.4, 0.7, t) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn crosses_one_once() {
        for (a, b, p) in [(0.5, 1.0, 0.5), (0.3, 0.8, 0.7), (1.2, 2.5, 0.3)] {
            let c = solve_cpl_binary(a, b, p, 0.5).unwrap();
            let signs: Vec<bool> = (0..4000).map(|i| h_w0(a, b, p, c, i as f64 * 0.01) > 1.0).collect();
            assert_eq!(signs.windows(2).filter(|w| w[0] != w[1]).count(), 1, "{a} {b} {p}");
        }
    }

    #[test]
    fn small_empirical_run() {
        let c = solve_cpl_binary(0.5, 1.0, 0.5, 0.5).unwrap();
        let cmp = breslow_limit(0.5, 1.0, 0.5, c, &[0.0, 1.0])
            .unwrap()
            .with_empirical(EmpiricalBreslowSpec {
                sample_size: 20_000,
                window_events: 4000,
                horizon: 2.0,
                seed: 3,
            })
            .unwrap();
        let emp = cmp.empirical.unwrap();
        assert!(!emp.windows.is_empty());
        assert!(emp.windows.iter().all(|w| w.relative_error() < 0.1));
        assert!(emp.windows.windows(2).all(|w| w[0].t_end == w[1].t_start));
    }
}

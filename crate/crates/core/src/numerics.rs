//! Numerical kernels shared by the estimators: adaptive Gauss-Kronrod
//! quadrature on `(0, ∞)`, Brent's bracketed root finder, a damped Newton
//! iteration with a central-difference Jacobian, and a small dense solve.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{Matrix, Vector};

/// Controls for [`integrate_semi_infinite`] and [`integrate_interval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Upper limit beyond which the integrand is treated as zero.
    pub tail_cut: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_subdivisions: 200,
            tail_cut: 50.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || !(self.tail_cut > 0.0) {
            return invalid("quadrature tolerances and tail cut must be positive");
        }
        if self.max_subdivisions == 0 {
            return invalid("max_subdivisions must be at least 1");
        }
        Ok(())
    }

    /// Same tolerances with the tail cut scaled by `factor`.
    pub fn with_tail_scaled(self, factor: f64) -> Self {
        QuadratureSpec {
            tail_cut: self.tail_cut * factor,
            ..self
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub root: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveReport {
    /// The first component of the root; convenient for scalar solves.
    pub fn scalar(&self) -> f64 {
        self.root[0]
    }
}

// 15-point Kronrod abscissae and weights with the embedded 7-point Gauss rule.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

fn eval_finite<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::DomainError { at: x })
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Segment> {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = eval_finite(f, centre)?;
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval_finite(f, centre - dx)?;
        let f2 = eval_finite(f, centre + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment { lo, hi, value, error })
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` over `[lo, hi]`.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    if !(lo.is_finite() && hi.is_finite()) {
        return invalid("integration limits must be finite");
    }
    if lo == hi {
        return Ok(0.0);
    }
    if lo > hi {
        return integrate_interval(f, hi, lo, spec).map(|v| -v);
    }
    let mut segments = vec![kronrod15(&f, lo, hi)?];
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        if segments.len() >= spec.max_subdivisions {
            return Err(Error::NonConvergence {
                iterations: segments.len(),
                residual: error,
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        if mid <= seg.lo || mid >= seg.hi {
            // Cannot split further at machine precision.
            return Err(Error::NonConvergence {
                iterations: segments.len() + 1,
                residual: error,
            });
        }
        segments.push(kronrod15(&f, seg.lo, mid)?);
        segments.push(kronrod15(&f, mid, seg.hi)?);
    }
}

/// Integral of `f` over `(0, ∞)`, truncated at `spec.tail_cut`.
///
/// Meant for integrands that carry an exponentially decaying factor such as
/// `e^{-u}`, for which the neglected tail is far below the tolerance.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<f64> {
    integrate_interval(f, 0.0, spec.tail_cut, spec)
}

const BRENT_MAX_ITER: usize = 200;

/// Brent's method on `[lo, hi]`; succeeds once `|g(root)| <= tol`.
pub fn brent_root<G: Fn(f64) -> Result<f64>>(g: G, lo: f64, hi: f64, tol: f64) -> Result<SolveReport> {
    if !(lo < hi) {
        return invalid(format!("bracket [{lo}, {hi}] is empty"));
    }
    if !(tol > 0.0) {
        return invalid("root tolerance must be positive");
    }
    let checked = |x: f64| -> Result<f64> {
        let y = g(x)?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::DomainError { at: x })
        }
    };
    let done = |x: f64, fx: f64, iterations: usize| SolveReport {
        root: vec![x],
        residual_norm: fx.abs(),
        iterations,
        converged: true,
    };

    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (checked(a)?, checked(b)?);
    if fa.abs() <= tol {
        return Ok(done(a, fa, 0));
    }
    if fb.abs() <= tol {
        return Ok(done(b, fb, 0));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::BadBracket {
            lo,
            hi,
            g_lo: fa,
            g_hi: fb,
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=BRENT_MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol_x = 2.0 * f64::EPSILON * b.abs();
        let half = 0.5 * (c - b);
        if fb.abs() <= tol {
            return Ok(done(b, fb, iter));
        }
        if half.abs() <= tol_x {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: fb.abs(),
            });
        }
        if e.abs() >= tol_x && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * half * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * half * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * half * q - (tol_x * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = half;
                e = d;
            }
        } else {
            d = half;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol_x { d } else { tol_x.copysign(half) };
        fb = checked(b)?;
    }
    Err(Error::NonConvergence {
        iterations: BRENT_MAX_ITER,
        residual: fb.abs(),
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

const MAX_HALVINGS: usize = 30;

/// Central-difference Jacobian of `f` at `x`, step `max(1e-6, 1e-6·|x_i|)`.
pub fn fd_jacobian<F: Fn(&[f64]) -> Result<Vec<f64>>>(f: &F, x: &[f64]) -> Result<Matrix> {
    let n = x.len();
    let mut jac: Option<Matrix> = None;
    let mut probe = x.to_vec();
    for i in 0..n {
        let h = (1e-6 * x[i].abs()).max(1e-6);
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        let jac = jac.get_or_insert_with(|| Matrix::zeros(fp.len(), n));
        for r in 0..fp.len() {
            jac[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac.unwrap_or_else(|| Matrix::zeros(0, 0)))
}

/// Damped Newton iteration for `F(x) = 0`.
///
/// Each full step is halved until `‖F‖∞` decreases. Convergence means
/// `‖F(root)‖∞ <= tol`.
pub fn newton_nd<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: F,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return invalid("Newton tolerance must be positive");
    }
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    if fx.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: fx.len(),
        });
    }
    let mut norm = inf_norm(&fx);
    if !norm.is_finite() {
        return Err(Error::DomainError { at: inf_norm(&x) });
    }
    let mut iterations = 0;
    while norm > tol {
        if iterations == max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
            });
        }
        let jac = fd_jacobian(&f, &x)?;
        let rhs = Vector::from_iterator(fx.len(), fx.iter().map(|v| -v));
        let step = match solve_linear(&jac, &rhs) {
            Ok(s) => s,
            Err(Error::SingularMatrix) => return Err(Error::SingularJacobian),
            Err(e) => return Err(e),
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi + scale * si).collect();
            // A failed evaluation (e.g. overflow far from the root) is treated like an
            // increase in the residual.
            if let Ok(ft) = f(&trial) {
                let n = inf_norm(&ft);
                if n.is_finite() && (n < norm || n <= tol) {
                    accepted = Some((trial, ft, n));
                    break;
                }
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((xn, fxn, n)) => {
                x = xn;
                fx = fxn;
                norm = n;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: norm,
                })
            }
        }
    }
    Ok(SolveReport {
        root: x,
        residual_norm: norm,
        iterations,
        converged: true,
    })
}

/// Solves `A x = rhs` by LU with partial pivoting and one refinement pass.
pub fn solve_linear(a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rhs.len(),
        });
    }
    if n == 0 {
        return Ok(Vector::zeros(0));
    }
    if a.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DomainError { at: f64::NAN });
    }
    let scale = a.amax();
    if scale == 0.0 {
        return Err(Error::SingularMatrix);
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_pivot <= 1e-13 * scale * n as f64 {
        return Err(Error::SingularMatrix);
    }
    let mut x = lu.solve(rhs).ok_or(Error::SingularMatrix)?;
    let residual = rhs - a * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    Ok(x)
}

/// Inverse of a small nonsingular matrix, via [`solve_linear`] column by column.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = 1.0;
        let col = solve_linear(a, &e)?;
        inv.set_column(j, &col);
    }
    Ok(inv)
}

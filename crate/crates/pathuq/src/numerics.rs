//! Scalar minimization and quadrature kernels shared by every bound.
//!
//! The minimizer works in a log-type coordinate `s` so that geometric
//! bracket expansion (factor 2 per step) and golden-section refinement
//! treat the neighbourhoods of both domain endpoints evenly.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("objective is +inf at every probed point")]
    EmptyDomain,
    #[error("non-finite value encountered at x = {0}")]
    NonFinite(f64),
    #[error("quadrature tolerance not met within {0} subdivisions")]
    MaxSubdivisions(usize),
    #[error("covariance matrix is not symmetric positive-definite")]
    NotSpd,
    #[error("gauss-hermite rule supports dimensions 1 and 2, got {0}")]
    Dimension(usize),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Default relative tolerance for minimizers.
pub const OPT_TOL: f64 = 1e-8;
/// Default relative tolerance for quadrature.
pub const QUAD_TOL: f64 = 1e-10;

/// Number of doublings probed toward each endpoint.
const LADDER_STEPS: f64 = 60.0;
const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// A scalar objective on the open interval `(lo, hi)`; `hi` may be `+inf`.
pub struct ScalarObjective<F> {
    pub eval: F,
    pub lo: f64,
    pub hi: f64,
}

impl<F: Fn(f64) -> f64> ScalarObjective<F> {
    pub fn new(eval: F, lo: f64, hi: f64) -> Self {
        Self { eval, lo, hi }
    }
}

/// Where the reported minimum sits relative to the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attainment {
    Interior,
    /// Infimum approached as `x -> lo`.
    LowerLimit,
    /// Infimum approached as `x -> hi`.
    UpperLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub f: f64,
    pub attainment: Attainment,
}

struct Chart {
    lo: f64,
    hi: f64,
    s_min: f64,
    s_max: f64,
}

impl Chart {
    fn new(lo: f64, hi: f64) -> Self {
        assert!(lo.is_finite() && hi > lo, "invalid domain ({lo}, {hi})");
        let limit = LADDER_STEPS * std::f64::consts::LN_2;
        let eps = 4.0 * f64::EPSILON;
        // keep mapped points strictly inside the domain after rounding
        let room = |edge: f64, width: f64| {
            if edge == 0.0 {
                limit
            } else {
                limit.min((width / (eps * edge.abs())).ln())
            }
        };
        if hi.is_finite() {
            let w = hi - lo;
            Self { lo, hi, s_min: -room(lo, w), s_max: room(hi, w) }
        } else {
            let s_min = if lo == 0.0 { -limit } else { -limit.min((1.0 / (eps * lo.abs())).ln()) };
            Self { lo, hi, s_min, s_max: limit }
        }
    }

    fn x(&self, s: f64) -> f64 {
        if self.hi.is_finite() {
            let w = self.hi - self.lo;
            if s <= 0.0 {
                let e = s.exp();
                self.lo + w * e / (1.0 + e)
            } else {
                let e = (-s).exp();
                self.hi - w * e / (1.0 + e)
            }
        } else {
            self.lo + s.exp()
        }
    }
}

/// Minimizes a quasiconvex objective over its open domain.
///
/// Infima approached at an endpoint are reported as the value at the
/// outermost probe with the corresponding [`Attainment`] flag.
pub fn minimize_scalar<F: Fn(f64) -> f64>(obj: &ScalarObjective<F>, tol: f64) -> Result<Minimum> {
    let chart = Chart::new(obj.lo, obj.hi);
    let best = Cell::new(Minimum { x: f64::NAN, f: f64::INFINITY, attainment: Attainment::Interior });
    let eval = |s: f64| -> Result<f64> {
        if s < chart.s_min || s > chart.s_max {
            return Ok(f64::INFINITY);
        }
        let x = chart.x(s);
        let v = (obj.eval)(x);
        if v.is_nan() {
            return Err(NumericsError::NonFinite(x));
        }
        let b = best.get();
        if v < b.f || b.x.is_nan() {
            best.set(Minimum { x, f: v, attainment: Attainment::Interior });
        }
        Ok(v)
    };

    let h = std::f64::consts::LN_2;
    let mut s0 = 0.0_f64.clamp(chart.s_min, chart.s_max);
    let mut f0 = eval(s0)?;
    if f0 == f64::INFINITY {
        let mut found = None;
        let mut k = 1.0;
        while s0 - k * h >= chart.s_min || s0 + k * h <= chart.s_max {
            for s in [s0 - k * h, s0 + k * h] {
                let v = eval(s)?;
                if v < f64::INFINITY {
                    found = Some((s, v));
                    break;
                }
            }
            if found.is_some() {
                break;
            }
            k += 1.0;
        }
        let (s, v) = found.ok_or(NumericsError::EmptyDomain)?;
        s0 = s;
        f0 = v;
    }

    let fl = eval(s0 - h)?;
    let fr = eval(s0 + h)?;
    let (mut a, mut b, mut c, mut fb) = if fl < f0 || fr < f0 {
        let dir = if fl < fr { -1.0 } else { 1.0 };
        let (mut prev, mut cur, mut fcur) = (s0, s0 + dir * h, fl.min(fr));
        loop {
            let next = cur + dir * h;
            if next < chart.s_min || next > chart.s_max {
                // still descending at the last ladder rung
                let edge = if dir < 0.0 { chart.s_min } else { chart.s_max };
                let fe = if (edge - cur).abs() > 1e-12 { eval(edge)? } else { fcur };
                if fe <= fcur + plateau_slack(fcur) {
                    let attainment = if dir < 0.0 { Attainment::LowerLimit } else { Attainment::UpperLimit };
                    return Ok(pick(Minimum { x: chart.x(edge), f: fe, attainment }, best.get()));
                }
                break (prev.min(edge), cur, prev.max(edge), fcur);
            }
            let fnext = eval(next)?;
            if fnext <= fcur + plateau_slack(fcur) {
                prev = cur;
                cur = next;
                fcur = fcur.min(fnext);
            } else {
                break (prev.min(next), cur, prev.max(next), fcur);
            }
        }
    } else {
        (s0 - h, s0, s0 + h, f0)
    };

    a = a.max(chart.s_min);
    c = c.min(chart.s_max);
    let width_tol = tol.max(1e-14);
    for _ in 0..200 {
        if c - a <= width_tol {
            break;
        }
        let x = if c - b > b - a { b + GOLDEN * (c - b) } else { b - GOLDEN * (b - a) };
        let fx = eval(x)?;
        if fx < fb {
            if x > b {
                a = b;
            } else {
                c = b;
            }
            b = x;
            fb = fx;
        } else if x > b {
            c = x;
        } else {
            a = x;
        }
    }
    Ok(best.get())
}

/// Rounding noise tolerated when deciding that an objective is still descending.
fn plateau_slack(f: f64) -> f64 {
    8.0 * f64::EPSILON * f.abs()
}

fn pick(limit: Minimum, best: Minimum) -> Minimum {
    if best.f < limit.f - plateau_slack(limit.f) {
        Minimum { attainment: Attainment::Interior, ..best }
    } else {
        Minimum { f: limit.f.min(best.f), ..limit }
    }
}

/// Variable substitution applied before adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    None,
    /// `t = scale * u / (1 - u)` mapping `(0, 1)` onto `(0, inf)`.
    SemiInfiniteRational,
    GaussHermite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub transform: Transform,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-300, rel_tol: QUAD_TOL, max_subdivisions: 50, transform: Transform::SemiInfiniteRational }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }
}

const INITIAL_PANELS: usize = 16;

/// Adaptive Simpson quadrature on a finite interval.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let g = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFinite(x))
        }
    };
    simpson_panels(&g, a, b, spec)
}

/// `∫_0^∞ f(t) dt` via `t = u/(1-u)` and adaptive Simpson.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<f64> {
    integrate_tail(f, 0.0, 1.0, spec)
}

/// `∫_start^∞ f(t) dt` via `t = start + scale·u/(1-u)`.
///
/// `scale` should be comparable to the length scale on which `f` carries
/// its mass. The integrand is taken to vanish at infinity.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, start: f64, scale: f64, spec: &QuadratureSpec) -> Result<f64> {
    let g = |u: f64| -> Result<f64> {
        if u >= 1.0 {
            return Ok(0.0);
        }
        let one_minus = 1.0 - u;
        let t = start + scale * u / one_minus;
        let v = f(t) * scale / (one_minus * one_minus);
        if v.is_finite() {
            Ok(v)
        } else if v.is_nan() && !f(t).is_nan() {
            Ok(0.0)
        } else {
            Err(NumericsError::NonFinite(t))
        }
    };
    simpson_panels(&g, 0.0, 1.0, spec)
}

fn simpson_panels(g: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    let n = INITIAL_PANELS;
    let h = (b - a) / n as f64;
    let mut panels = Vec::with_capacity(n);
    let mut coarse = 0.0;
    let mut f_left = g(a)?;
    for i in 0..n {
        let x0 = a + i as f64 * h;
        let x2 = if i + 1 == n { b } else { a + (i + 1) as f64 * h };
        let x1 = 0.5 * (x0 + x2);
        let f1 = g(x1)?;
        let f2 = g(x2)?;
        let s = (x2 - x0) / 6.0 * (f_left + 4.0 * f1 + f2);
        coarse += s;
        panels.push((x0, x2, f_left, f1, f2, s));
        f_left = f2;
    }
    let tol = spec.abs_tol.max(spec.rel_tol * coarse.abs());
    let mut total = 0.0;
    for (x0, x2, f0, f1, f2, s) in panels {
        total += simpson_rec(g, x0, x2, f0, f1, f2, s, tol / n as f64, 0, spec.max_subdivisions)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    g: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    max_depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = g(lm)?;
    let frm = g(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a) <= 4.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE) {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= max_depth {
        return Err(NumericsError::MaxSubdivisions(max_depth));
    }
    Ok(simpson_rec(g, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, max_depth)?
        + simpson_rec(g, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, max_depth)?)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight `e^{-x²}`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Tensor-product Gauss–Hermite rule for `N(mean, cov)` in dimension 1 or 2:
/// returns the points and their probability weights.
pub fn gaussian_rule(mean: &DVector<f64>, cov: &DMatrix<f64>, order: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let d = mean.len();
    if d == 0 || d > 2 {
        return Err(NumericsError::Dimension(d));
    }
    if cov.nrows() != d || cov.ncols() != d || (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
        return Err(NumericsError::NotSpd);
    }
    let chol = nalgebra::Cholesky::new(cov.clone()).ok_or(NumericsError::NotSpd)?;
    let l = chol.l();
    let (y, w) = gauss_hermite(order);
    let norm = std::f64::consts::PI.powf(-(d as f64) / 2.0);
    let root2 = std::f64::consts::SQRT_2;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if d == 1 {
        for (yi, wi) in y.iter().zip(&w) {
            points.push(mean + &l * DVector::from_element(1, root2 * yi));
            weights.push(wi * norm);
        }
    } else {
        for (yi, wi) in y.iter().zip(&w) {
            for (yj, wj) in y.iter().zip(&w) {
                let z = DVector::from_vec(vec![root2 * yi, root2 * yj]);
                points.push(mean + &l * z);
                weights.push(wi * wj * norm);
            }
        }
    }
    Ok((points, weights))
}

/// `∫ g dN(mean, cov)` by a tensor Gauss–Hermite rule, exact for
/// polynomials of degree below `2·order`.
pub fn gauss_hermite_nd<G: Fn(&DVector<f64>) -> f64>(
    g: G,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    order: usize,
) -> Result<f64> {
    let (points, weights) = gaussian_rule(mean, cov, order)?;
    Ok(points.iter().zip(&weights).map(|(p, w)| w * g(p)).sum())
}

/// `log Σ w_i exp(h_i)` with the largest exponent factored out.
pub fn log_sum_exp_weighted(terms: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let terms: Vec<(f64, f64)> = terms.into_iter().filter(|(w, _)| *w > 0.0).collect();
    let m = terms.iter().map(|(_, h)| *h).fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    let s: f64 = terms.iter().map(|(w, h)| w * (h - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower_form(c: f64) -> f64 {
        (2.0 - 2.0 * (1.0 + 2.0 * c).sqrt()) / (c + 0.02)
    }

    #[test]
    fn minimizer_recovers_stopping_time_optimizers() {
        let lower = minimize_scalar(&ScalarObjective::new(lower_form, 0.0, f64::INFINITY), OPT_TOL).unwrap();
        assert!((lower.x - 0.22).abs() < 1e-6);
        assert!((-lower.f - 5.0 / 3.0).abs() < 1e-10);
        let upper = minimize_scalar(
            &ScalarObjective::new(|l: f64| (2.0 - 2.0 * (1.0 - 2.0 * l).sqrt()) / (l - 0.02), 0.02, 0.5),
            OPT_TOL,
        )
        .unwrap();
        assert!((upper.x - 0.18).abs() < 1e-6);
        assert!((upper.f - 2.5).abs() < 1e-10);
        assert_eq!(upper.attainment, Attainment::Interior);
    }

    #[test]
    fn monotone_objective_reports_boundary_limit() {
        let m = minimize_scalar(&ScalarObjective::new(|c: f64| c * c, 0.0, f64::INFINITY), OPT_TOL).unwrap();
        assert_eq!(m.attainment, Attainment::LowerLimit);
        assert!(m.x > 0.0 && m.f < 1e-30);
        let m = minimize_scalar(&ScalarObjective::new(|c: f64| 1.0 / c, 0.0, f64::INFINITY), OPT_TOL).unwrap();
        assert_eq!(m.attainment, Attainment::UpperLimit);
        assert!(m.f < 1e-17);
    }

    #[test]
    fn infinite_region_is_never_crossed() {
        let obj =
            ScalarObjective::new(|c: f64| if c >= 0.3 { f64::INFINITY } else { (c - 0.2).powi(2) }, 0.0, f64::INFINITY);
        let m = minimize_scalar(&obj, OPT_TOL).unwrap();
        assert!((m.x - 0.2).abs() < 1e-6);
        let empty = ScalarObjective::new(|_| f64::INFINITY, 0.0, 1.0);
        assert_eq!(minimize_scalar(&empty, OPT_TOL), Err(NumericsError::EmptyDomain));
        let nan = ScalarObjective::new(|_| f64::NAN, 0.0, 1.0);
        assert!(matches!(minimize_scalar(&nan, OPT_TOL), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn finite_domain_probes_stay_inside() {
        let obj = ScalarObjective::new(
            |c: f64| {
                assert!(c > 0.02 && c < 0.5);
                -c
            },
            0.02,
            0.5,
        );
        let m = minimize_scalar(&obj, OPT_TOL).unwrap();
        assert_eq!(m.attainment, Attainment::UpperLimit);
        assert!(m.x < 0.5 && 0.5 - m.x < 1e-12);
    }

    #[test]
    fn exponential_and_hitting_densities_integrate() {
        let spec = QuadratureSpec::default();
        let v = integrate_semi_infinite(|u| (-u).exp(), &spec).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let density = |a: f64, mu: f64| {
            move |t: f64| {
                if t <= 0.0 {
                    0.0
                } else {
                    a.abs() / (2.0 * std::f64::consts::PI).sqrt()
                        * t.powf(-1.5)
                        * (-(a - mu * t).powi(2) / (2.0 * t)).exp()
                }
            }
        };
        let v = integrate_semi_infinite(density(2.0, 1.0), &spec).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let v = integrate_semi_infinite(density(2.0, -1.0), &spec).unwrap();
        assert!((v - (-4.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn interval_quadrature_handles_kinks() {
        let spec = QuadratureSpec::default();
        let v = integrate_interval(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &spec).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-12);
        let v = integrate_interval(|x: f64| if x > 0.0 { x * x.ln() } else { 0.0 }, 0.0, 1.0, &spec).unwrap();
        assert!((v + 0.25).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_weights_and_moments() {
        let (x, w) = gauss_legendre(200);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((m - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_hermite_moments() {
        let mean = DVector::from_vec(vec![0.0, 0.0]);
        let cov = DMatrix::from_diagonal_element(2, 2, 0.5);
        let one = gauss_hermite_nd(|_| 1.0, &mean, &cov, 8).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        let sq = gauss_hermite_nd(|x| x.norm_squared(), &mean, &cov, 8).unwrap();
        assert!((sq - 1.0).abs() < 1e-14);
        let cross = gauss_hermite_nd(|x| x[0] * x[1], &mean, &cov, 8).unwrap();
        assert!(cross.abs() < 1e-15);
        let (_, w) = gauss_hermite(150);
        assert!((w.iter().sum::<f64>() - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_rejects_bad_covariance() {
        let mean = DVector::from_vec(vec![0.0, 0.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(gauss_hermite_nd(|_| 1.0, &mean, &cov, 4), Err(NumericsError::NotSpd));
        let mean3 = DVector::zeros(3);
        assert_eq!(gauss_hermite_nd(|_| 1.0, &mean3, &DMatrix::identity(3, 3), 4), Err(NumericsError::Dimension(3)));
    }

    #[test]
    fn log_sum_exp_is_shift_invariant() {
        let v = log_sum_exp_weighted([(0.5, 1000.0), (0.5, 1000.0)]);
        assert!((v - 1000.0).abs() < 1e-12);
        assert_eq!(log_sum_exp_weighted([(1.0, f64::NEG_INFINITY)]), f64::NEG_INFINITY);
    }
}

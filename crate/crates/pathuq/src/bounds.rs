//! Relative-entropy uncertainty bounds.
//!
//! Each bound minimizes a one-dimensional objective built from a cumulant
//! generating function (or a tilted expectation) and a relative-entropy
//! budget. Lower bounds are reported as values on the quantity itself, so
//! an `(lower, upper)` pair from the same inputs is an interval.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cgf::DriftedBmHittingLaw;
use crate::numerics::{
    self, gauss_legendre, gaussian_rule, integrate_interval, integrate_tail, minimize_scalar, Attainment,
    NumericsError, QuadratureSpec, ScalarObjective, OPT_TOL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundError {
    #[error("bound is infinite: the objective is +inf over the whole domain")]
    Infinite,
    #[error("weighted integral does not converge")]
    NonIntegrable,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Interior,
    BoundaryLimit,
    Infinite,
}

impl BoundStatus {
    pub fn label(self) -> &'static str {
        match self {
            BoundStatus::Interior => "ok",
            BoundStatus::BoundaryLimit => "boundary",
            BoundStatus::Infinite => "infinite",
        }
    }

    /// The less regular of two statuses.
    pub fn worst(self, other: Self) -> Self {
        use BoundStatus::*;
        match (self, other) {
            (Infinite, _) | (_, Infinite) => Infinite,
            (BoundaryLimit, _) | (_, BoundaryLimit) => BoundaryLimit,
            _ => Interior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    /// Optimizing tilt parameter (`c*`, or `λ*` for stopping-time upper bounds).
    pub optimizer: f64,
    pub side: Side,
    pub status: BoundStatus,
}

impl BoundResult {
    fn from_minimum(m: numerics::Minimum, side: Side) -> Self {
        let status = match m.attainment {
            Attainment::Interior => BoundStatus::Interior,
            _ => BoundStatus::BoundaryLimit,
        };
        Self { value: side.sign() * m.f, optimizer: m.x, side, status }
    }

    pub fn infinite(side: Side) -> Self {
        Self { value: side.sign() * f64::INFINITY, optimizer: f64::NAN, side, status: BoundStatus::Infinite }
    }
}

/// A cumulant generating function with its open domain `(c_min, c_max)`.
#[derive(Clone)]
pub struct CgfHandle {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub c_max: f64,
    pub c_min: f64,
    pub centered: bool,
}

impl std::fmt::Debug for CgfHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CgfHandle")
            .field("c_min", &self.c_min)
            .field("c_max", &self.c_max)
            .field("centered", &self.centered)
            .finish()
    }
}

impl CgfHandle {
    pub fn new(eval: impl Fn(f64) -> f64 + Send + Sync + 'static, c_max: f64, centered: bool) -> Self {
        Self { eval: Arc::new(eval), c_max, c_min: f64::NEG_INFINITY, centered }
    }

    pub fn with_lower_domain(mut self, c_min: f64) -> Self {
        self.c_min = c_min;
        self
    }

    /// `Λ(c)`, or `+inf` outside the domain.
    pub fn eval(&self, c: f64) -> f64 {
        if c >= self.c_max || c <= self.c_min {
            f64::INFINITY
        } else {
            (self.eval)(c)
        }
    }

    /// Supremum of admissible `c > 0` for `Λ(±c)`.
    pub fn side_limit(&self, side: Side) -> f64 {
        match side {
            Side::Upper => self.c_max,
            Side::Lower => -self.c_min,
        }
    }

    /// Centered CGF of a Bernoulli(p) indicator.
    pub fn bernoulli_centered(p: f64) -> Self {
        Self::new(
            move |c| {
                if p <= 0.0 || p >= 1.0 {
                    0.0
                } else {
                    (p * c.exp_m1()).ln_1p() - c * p
                }
            },
            f64::INFINITY,
            true,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    Scalar,
    AffineInStoppedTime,
}

/// Relative-entropy budget `η₀` or `η₀ + K·E[τ∧n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelEntBudget {
    pub eta0: f64,
    pub k: f64,
    pub kind: BudgetKind,
}

impl RelEntBudget {
    pub fn scalar(eta0: f64) -> Self {
        Self { eta0, k: 0.0, kind: BudgetKind::Scalar }
    }

    pub fn affine(eta0: f64, k: f64) -> Self {
        Self { eta0, k, kind: BudgetKind::AffineInStoppedTime }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 >= 0.0 && self.k.is_finite() && self.k >= 0.0) {
            return Err(BoundError::InvalidInput(format!("budget must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(BoundError::InvalidInput(format!("budget must be finite and nonnegative, got {eta}")))
    }
}

fn minimize(obj: impl Fn(f64) -> f64, lo: f64, hi: f64, side: Side) -> Result<BoundResult> {
    match minimize_scalar(&ScalarObjective::new(obj, lo, hi), OPT_TOL) {
        Ok(m) if m.f == f64::INFINITY => Err(BoundError::Infinite),
        Ok(m) => Ok(BoundResult::from_minimum(m, side)),
        Err(NumericsError::EmptyDomain) => Err(BoundError::Infinite),
        Err(e) => Err(e.into()),
    }
}

/// `inf_{c>0} { Λ(±c)/c + η/c }`, solved in the convex variable `η' = 1/c`.
///
/// With a centered CGF the result bounds `±(E_P̃[F] − E_P[F])`.
pub fn info_bound(cgf: &CgfHandle, eta: f64, side: Side) -> Result<BoundResult> {
    check_eta(eta)?;
    let s = side.sign();
    let limit = cgf.side_limit(side);
    let lo = if limit.is_finite() { 1.0 / limit } else { 0.0 };
    let obj = |v: f64| {
        let l = cgf.eval(s / v);
        if l == f64::INFINITY {
            f64::INFINITY
        } else {
            v * l + v * eta
        }
    };
    let r = minimize(obj, lo, f64::INFINITY, side)?;
    Ok(BoundResult { optimizer: 1.0 / r.optimizer, ..r })
}

/// Same bound as [`info_bound`], minimized directly over `c`.
pub fn info_bound_c_form(cgf: &CgfHandle, eta: f64, side: Side) -> Result<BoundResult> {
    check_eta(eta)?;
    let s = side.sign();
    let obj = |c: f64| (cgf.eval(s * c) + eta) / c;
    minimize(obj, 0.0, cgf.side_limit(side), side)
}

/// A baseline law against which `log E[exp(h(X))]` can be evaluated.
pub trait ExpectationLaw: Send + Sync {
    type State;

    /// `log E[exp(h(X))]`; `+inf` when the expectation diverges.
    fn log_mean_exp(&self, h: &dyn Fn(&Self::State) -> f64) -> Result<f64>;
}

type StateFn<S> = Box<dyn Fn(&S) -> f64 + Send + Sync>;

/// Payoff `F` and penalty `G` under a baseline law, the ingredients of
/// `log E_P[exp(±c·F + G)]`.
pub struct TiltedExpectation<L: ExpectationLaw> {
    pub law: L,
    pub payoff: StateFn<L::State>,
    pub penalty: StateFn<L::State>,
}

impl<L: ExpectationLaw> TiltedExpectation<L> {
    pub fn new(
        law: L,
        payoff: impl Fn(&L::State) -> f64 + Send + Sync + 'static,
        penalty: impl Fn(&L::State) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { law, payoff: Box::new(payoff), penalty: Box::new(penalty) }
    }

    /// `log E_P[exp(c·F + G)]` for signed `c`.
    pub fn log_tilted(&self, c: f64) -> Result<f64> {
        self.law.log_mean_exp(&|x| c * (self.payoff)(x) + (self.penalty)(x))
    }
}

/// `inf_{c>0} (1/c)·log E_P[exp(±c·F + G)]`, a bound on `±E_P̃[F]` for every
/// alternative whose goal-oriented relative entropy is at most `E_P̃[G]`.
pub fn tilted_bound<L: ExpectationLaw>(t: &TiltedExpectation<L>, side: Side) -> Result<BoundResult> {
    let s = side.sign();
    let failure: RefCell<Option<BoundError>> = RefCell::new(None);
    let obj = |c: f64| match t.log_tilted(s * c) {
        Ok(v) => v / c,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let r = minimize(obj, 0.0, f64::INFINITY, side);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    r
}

/// Interval for `P̃(A)` given `P(A) = p` and a budget `eta`, clamped to `[0, 1]`.
pub fn event_prob_bound(p: f64, eta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BoundError::InvalidInput(format!("probability out of range: {p}")));
    }
    let cgf = CgfHandle::bernoulli_centered(p);
    let up = info_bound(&cgf, eta, Side::Upper)?;
    let lo = info_bound(&cgf, eta, Side::Lower)?;
    Ok(((p + lo.value).clamp(0.0, 1.0), (p + up.value).clamp(0.0, 1.0)))
}

const BOOTSTRAP_MIN_STEP: f64 = 1e-6;

/// `inf_{λ>1} Λ_G(λ)/(λ−1)`, an upper bound on a relative entropy dominated
/// by `E_P̃[G]`.
pub fn rel_ent_bootstrap(cgf_g: &CgfHandle) -> Result<BoundResult> {
    if cgf_g.c_max <= 1.0 + BOOTSTRAP_MIN_STEP {
        return Err(BoundError::Infinite);
    }
    // Λ(1+u)/u is lost to cancellation as u → 0; stopping at a small u
    // keeps the value an upper bound by convexity; dividing by the
    // representable λ − 1 rather than u avoids a 1e-16/u relative error
    let obj = |u: f64| {
        let lam = 1.0 + u;
        cgf_g.eval(lam) / (lam - 1.0)
    };
    let r = minimize(obj, BOOTSTRAP_MIN_STEP, cgf_g.c_max - 1.0, Side::Upper)?;
    Ok(BoundResult { optimizer: 1.0 + r.optimizer, ..r })
}

/// Bounds on `E_P̃[τ]` from the uncentered CGF of `τ` under `P` and an
/// affine budget `η₀ + K·E_P̃[τ]`.
pub fn stopping_time_mean_bound(cgf_tau: &CgfHandle, budget: RelEntBudget) -> Result<(BoundResult, BoundResult)> {
    budget.validate()?;
    if budget.kind != BudgetKind::AffineInStoppedTime {
        return Err(BoundError::InvalidInput("stopping-time bound needs an affine budget".into()));
    }
    let (k, eta0) = (budget.k, budget.eta0);
    let lower = minimize(|c| (cgf_tau.eval(-c) + eta0) / (c + k), 0.0, cgf_tau.side_limit(Side::Lower), Side::Lower)?;
    if k >= cgf_tau.c_max {
        return Err(BoundError::Infinite);
    }
    let upper = minimize(|l| (cgf_tau.eval(l) + eta0) / (l - k), k, cgf_tau.c_max, Side::Upper)?;
    Ok((lower, upper))
}

/// Weight measure on `(0, ∞)` for discounted quantities.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscountMeasure {
    /// `λ e^{−λs} ds`.
    Exponential { rate: f64 },
    /// Piecewise-linear density through the given nodes, zero outside.
    Tabulated { nodes: Vec<f64>, density: Vec<f64> },
}

/// Truncation level for the exponential weight.
const DISCOUNT_CUTOFF: f64 = 1e-12;
const GL_ORDER: usize = 8;
const GRADING_LEVELS: i32 = 30;

impl DiscountMeasure {
    /// Quadrature nodes and weights; for the exponential weight the range is
    /// truncated where the weight, corrected by the integrand growth rate
    /// `growth`, falls below `1e-12`.
    pub fn rule(&self, growth: f64) -> Result<Vec<(f64, f64)>> {
        match self {
            DiscountMeasure::Exponential { rate } => {
                if !(*rate > 0.0) {
                    return Err(BoundError::InvalidInput(format!("discount rate must be positive, got {rate}")));
                }
                let decay = rate - growth.max(0.0);
                if !(decay > 0.0) {
                    return Err(BoundError::NonIntegrable);
                }
                let s_max = -DISCOUNT_CUTOFF.ln() / decay + 10.0 / rate;
                let panels = ((s_max * rate * 4.0).ceil() as usize).clamp(32, 4000);
                let (x, w) = gauss_legendre(GL_ORDER);
                let h = s_max / panels as f64;
                // the first panel is graded geometrically toward s = 0, where
                // per-time bounds typically behave like √s
                let mut edges = vec![0.0];
                edges.extend((0..=GRADING_LEVELS).rev().map(|k| h * 0.5f64.powi(k)));
                edges.extend((2..=panels).map(|p| p as f64 * h));
                let mut out = Vec::with_capacity(edges.len() * GL_ORDER);
                for pair in edges.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    for (xi, wi) in x.iter().zip(&w) {
                        let s = a + 0.5 * (b - a) * (xi + 1.0);
                        out.push((s, 0.5 * (b - a) * wi * rate * (-rate * s).exp()));
                    }
                }
                Ok(out)
            }
            DiscountMeasure::Tabulated { nodes, density } => {
                if nodes.len() != density.len() || nodes.len() < 2 || nodes.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(BoundError::InvalidInput("tabulated weight needs increasing nodes".into()));
                }
                if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(BoundError::NonIntegrable);
                }
                let n = nodes.len();
                let mut out: Vec<(f64, f64)> = nodes.iter().map(|s| (*s, 0.0)).collect();
                for i in 0..n - 1 {
                    let h = nodes[i + 1] - nodes[i];
                    out[i].1 += 0.5 * h * density[i];
                    out[i + 1].1 += 0.5 * h * density[i + 1];
                }
                Ok(out)
            }
        }
    }

    /// Weight mass beyond the quadrature range.
    fn tail(&self, rule: &[(f64, f64)]) -> f64 {
        match self {
            DiscountMeasure::Exponential { rate } => {
                let s_end = rule.last().map(|r| r.0).unwrap_or(0.0);
                (-rate * s_end).exp()
            }
            DiscountMeasure::Tabulated { .. } => 0.0,
        }
    }
}

/// A family of CGFs and budgets indexed by time.
pub trait DiscountedFamily: Sync {
    fn cgf(&self, s: f64) -> Result<CgfHandle>;
    fn eta(&self, s: f64) -> f64;
    /// Exponential growth rate of the per-time bound, used to size the
    /// truncation of the exponential weight.
    fn growth_rate(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscountMode {
    /// Integrate the per-time infimum.
    Inside,
    /// Infimum of the integrated objective.
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedBound {
    pub bound: BoundResult,
    /// Estimate of the contribution beyond the truncated range; already
    /// added to `bound.value` in the conservative direction.
    pub remainder: f64,
}

/// Bound on a weighted time integral of quantities of interest.
pub fn discounted_bound<Fam: DiscountedFamily + ?Sized>(
    family: &Fam,
    weight: &DiscountMeasure,
    side: Side,
    mode: DiscountMode,
) -> Result<DiscountedBound> {
    use rayon::prelude::*;
    let rule = weight.rule(family.growth_rate())?;
    let per_node: Vec<(CgfHandle, f64)> =
        rule.par_iter().map(|(s, _)| Ok((family.cgf(*s)?, family.eta(*s)))).collect::<Result<_>>()?;
    let tail_mass = weight.tail(&rule);

    match mode {
        DiscountMode::Inside => {
            let values: Vec<BoundResult> =
                per_node.par_iter().map(|(cgf, eta)| info_bound(cgf, *eta, side)).collect::<Result<_>>()?;
            let mut value = 0.0;
            let mut status = BoundStatus::Interior;
            for ((_, w), v) in rule.iter().zip(&values) {
                value += w * v.value;
                if v.status == BoundStatus::Interior {
                    continue;
                }
                status = status.worst(BoundStatus::BoundaryLimit);
            }
            let remainder = match values.last() {
                Some(last) if tail_mass > 0.0 => tail_estimate(last.value, tail_mass, family.growth_rate(), weight),
                _ => 0.0,
            };
            let value = value + side.sign() * remainder;
            Ok(DiscountedBound { bound: BoundResult { value, optimizer: f64::NAN, side, status }, remainder })
        }
        DiscountMode::Outside => {
            let sgn = side.sign();
            let limit = per_node.iter().map(|(cgf, _)| cgf.side_limit(side)).fold(f64::INFINITY, f64::min);
            let d: f64 = rule.iter().zip(&per_node).map(|((_, w), (_, eta))| w * eta).sum();
            let obj = |c: f64| {
                let mut acc = 0.0;
                for ((_, w), (cgf, _)) in rule.iter().zip(&per_node) {
                    let l = cgf.eval(sgn * c);
                    if l == f64::INFINITY {
                        return f64::INFINITY;
                    }
                    acc += w * l;
                }
                (acc + d) / c
            };
            let bound = minimize(obj, 0.0, limit, side)?;
            Ok(DiscountedBound { bound, remainder: 0.0 })
        }
    }
}

fn tail_estimate(last: f64, tail_mass: f64, growth: f64, weight: &DiscountMeasure) -> f64 {
    match weight {
        DiscountMeasure::Exponential { rate } => {
            let decay = rate - growth.max(0.0);
            last.abs() * tail_mass * rate / decay
        }
        DiscountMeasure::Tabulated { .. } => 0.0,
    }
}

/// Hitting-time law used as a baseline in tilted expectations; the state is
/// the hitting time, `+inf` on the event that the level is never reached.
#[derive(Debug, Clone)]
pub struct HittingTimeLaw {
    pub law: DriftedBmHittingLaw,
    /// Points where the integrand may have kinks or jumps.
    pub breakpoints: Vec<f64>,
    pub spec: QuadratureSpec,
}

impl HittingTimeLaw {
    pub fn new(law: DriftedBmHittingLaw) -> Self {
        Self { law, breakpoints: Vec::new(), spec: QuadratureSpec::default() }
    }

    pub fn with_breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(points.into_iter().filter(|t| t.is_finite() && *t > 0.0));
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
        self
    }

    pub fn with_spec(mut self, spec: QuadratureSpec) -> Self {
        self.spec = spec;
        self
    }

    fn split_points(&self) -> Vec<f64> {
        let scale = self.law.time_scale();
        let mut pts: Vec<f64> = (-4..=6).step_by(2).map(|k| scale * 2f64.powi(k)).collect();
        pts.extend(&self.breakpoints);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Integrates `g(t)` against the density over `(0, ∞)` piecewise.
    fn integrate(&self, g: &dyn Fn(f64) -> f64, spec: &QuadratureSpec) -> Result<f64> {
        let pts = self.split_points();
        let mut total = 0.0;
        let mut a = 0.0;
        for &b in &pts {
            total += integrate_interval(g, a, b, spec)?;
            a = b;
        }
        total += integrate_tail(g, a, a, spec)?;
        Ok(total)
    }
}

impl ExpectationLaw for HittingTimeLaw {
    type State = f64;

    fn log_mean_exp(&self, h: &dyn Fn(&f64) -> f64) -> Result<f64> {
        let law = &self.law;
        let scale = law.time_scale();
        let far = (1e4 * scale).max(10.0 * self.breakpoints.last().copied().unwrap_or(0.0)).max(1e3);
        let slope = (h(&(2.0 * far)) - h(&far)) / far;
        if slope.is_nan() {
            return Err(NumericsError::NonFinite(far).into());
        }
        if slope >= law.exponential_moment_limit() {
            return Ok(f64::INFINITY);
        }
        let atom = law.atom();
        let h_inf = if atom > 0.0 { h(&f64::INFINITY) } else { 0.0 };
        let mut probes: Vec<f64> = (-40..=40).map(|k| scale * 2f64.powf(k as f64 / 2.0)).collect();
        for b in &self.breakpoints {
            probes.extend([b * (1.0 - 1e-9), b * (1.0 + 1e-9)]);
        }
        let log_atom = if atom > 0.0 { atom.ln() } else { f64::NEG_INFINITY };
        let mut samples = Vec::with_capacity(probes.len() + 1);
        for t in &probes {
            let v = h(t);
            if v.is_nan() {
                return Err(NumericsError::NonFinite(*t).into());
            }
            if v == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            samples.push((v, law.log_density(*t)));
        }
        if atom > 0.0 {
            samples.push((h_inf, log_atom));
        }
        // shift by the largest weighted exponent; judge the size of h only
        // where the law carries non-negligible mass
        let shift = samples.iter().map(|(v, ld)| v + ld).fold(f64::NEG_INFINITY, f64::max);
        let peak = samples.iter().map(|(_, ld)| *ld).fold(f64::NEG_INFINITY, f64::max);
        let size = samples.iter().filter(|(_, ld)| *ld > peak - 40.0).map(|(v, _)| v.abs()).fold(0.0, f64::max);

        let spec = self.spec;
        if size <= 0.5 {
            // small exponents: integrate exp(h) − 1 so that log1p keeps relative accuracy
            let spec = spec.with_abs_tol(1e-16 * size.max(1e-300));
            let g = |t: f64| {
                let ld = law.log_density(t);
                if ld == f64::NEG_INFINITY {
                    0.0
                } else {
                    let v = h(&t);
                    if v > 1.0 {
                        (v + ld).exp() - ld.exp()
                    } else {
                        v.exp_m1() * ld.exp()
                    }
                }
            };
            let mass = self.integrate(&g, &spec)? + atom * h_inf.exp_m1();
            Ok(mass.ln_1p())
        } else {
            // exponents near `shift` carry rounding noise of relative size ε·|shift|
            let noise = 64.0 * f64::EPSILON * shift.abs();
            let spec = spec.with_rel_tol(spec.rel_tol.max(noise));
            let g = |t: f64| {
                let ld = law.log_density(t);
                if ld == f64::NEG_INFINITY {
                    0.0
                } else {
                    (h(&t) + ld - shift).exp()
                }
            };
            let mass = self.integrate(&g, &spec)? + (h_inf + log_atom - shift).exp();
            Ok(shift + mass.ln())
        }
    }
}

/// Finitely supported law with `(probability, state)` atoms.
#[derive(Debug, Clone)]
pub struct DiscreteLaw<S> {
    pub atoms: Vec<(f64, S)>,
}

impl<S: Send + Sync> ExpectationLaw for DiscreteLaw<S> {
    type State = S;

    fn log_mean_exp(&self, h: &dyn Fn(&S) -> f64) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.atoms.len());
        for (p, x) in &self.atoms {
            if *p > 0.0 {
                let v = h(x);
                if v.is_nan() {
                    return Err(NumericsError::NonFinite(v).into());
                }
                terms.push((*p, v));
            }
        }
        Ok(numerics::log_sum_exp_weighted(terms))
    }
}

/// Gaussian law in dimension 1 or 2, integrated by a tensor Gauss–Hermite rule.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, order: usize) -> Result<Self> {
        let (points, weights) = gaussian_rule(&mean, &cov, order)?;
        Ok(Self { points, weights })
    }
}

impl ExpectationLaw for GaussianLaw {
    type State = DVector<f64>;

    fn log_mean_exp(&self, h: &dyn Fn(&DVector<f64>) -> f64) -> Result<f64> {
        let terms: Vec<(f64, f64)> = self.points.iter().zip(&self.weights).map(|(x, w)| (*w, h(x))).collect();
        if terms.iter().any(|(_, v)| v.is_nan()) {
            return Err(NumericsError::NonFinite(f64::NAN).into());
        }
        Ok(numerics::log_sum_exp_weighted(terms))
    }
}

//! Relative-entropy budgets and rates.
//!
//! Covers drift-perturbed diffusions (Girsanov), semi-Markov perturbations of
//! Markovian waiting times, and exact path-space entropies of small discrete
//! and continuous-time chains that serve as ground truth in tests.

use nalgebra::{DMatrix, DVector};

use crate::bounds::{CgfHandle, RelEntBudget};
use crate::numerics::{integrate_interval, integrate_tail, NumericsError, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelEntError {
    #[error("invalid phase-type representation: {0}")]
    InvalidPhaseType(String),
    #[error("mean sojourn time is not finite and positive")]
    NonErgodic,
    #[error("enumeration over {states} states and horizon {horizon} exceeds the supported size")]
    StateSpaceTooLarge { states: usize, horizon: usize },
    #[error("alternative model charges the transition {from} -> {to} that the baseline forbids")]
    AbsContViolation { from: usize, to: usize },
    #[error("discounted integral does not converge")]
    NonIntegrable,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, RelEntError>;

/// Budget `½β²·E[τ∧T]` for a drift perturbation bounded by `beta_sup`.
pub fn girsanov_sde_budget(beta_sup: f64) -> RelEntBudget {
    RelEntBudget::affine(0.0, 0.5 * beta_sup * beta_sup)
}

/// `∫₀^∞ η_s λe^{−λs} ds`.
pub fn discounted_rel_ent(eta_s: impl Fn(f64) -> f64, lam: f64) -> Result<f64> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(RelEntError::InvalidInput(format!("discount rate must be positive, got {lam}")));
    }
    let spec = QuadratureSpec::default().with_abs_tol(1e-15);
    let v = integrate_tail(|s| eta_s(s) * lam * (-lam * s).exp(), 0.0, 1.0 / lam, &spec)
        .map_err(|_| RelEntError::NonIntegrable)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RelEntError::NonIntegrable)
    }
}

/// `∫₀^∞ f` split at multiples of `scale` so that features near the origin
/// are resolved before the rational tail map takes over.
fn integrate_positive_line(f: impl Fn(f64) -> f64, scale: f64, spec: &QuadratureSpec) -> Result<f64> {
    let mut total = 0.0;
    let mut a = 0.0;
    for k in [1e-3, 1e-2, 1e-1, 1.0, 4.0, 16.0] {
        let b = k * scale;
        total += integrate_interval(&f, a, b, spec)?;
        a = b;
    }
    Ok(total + integrate_tail(&f, a, 16.0 * scale, spec)?)
}

/// A waiting-time law on `(0, ∞)`.
pub trait WaitingTime: Sync {
    fn density(&self, t: f64) -> f64;

    fn mean(&self) -> f64;

    /// `log(h(t) / (λe^{−λt}))`.
    fn log_ratio_to_exponential(&self, t: f64, rate: f64) -> f64 {
        (self.density(t) / rate).ln() + rate * t
    }
}

/// Absorption time of a continuous-time chain started in `nu` with
/// sub-generator `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    pub nu: DVector<f64>,
    pub t: DMatrix<f64>,
    exit: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTypeValue {
    pub density: f64,
    pub cdf: f64,
    pub mean: f64,
}

impl PhaseType {
    pub fn new(nu: DVector<f64>, t: DMatrix<f64>) -> Result<Self> {
        let k = nu.len();
        let bad = |m: &str| Err(RelEntError::InvalidPhaseType(m.to_string()));
        if k == 0 || t.nrows() != k || t.ncols() != k {
            return bad("dimensions of nu and T disagree");
        }
        if nu.iter().any(|p| !(*p >= 0.0)) || (nu.sum() - 1.0).abs() > 1e-12 {
            return bad("nu must be a probability vector");
        }
        for i in 0..k {
            for j in 0..k {
                let v = t[(i, j)];
                if !v.is_finite() || (i == j && v >= 0.0) || (i != j && v < 0.0) {
                    return bad("T needs negative diagonal and nonnegative off-diagonal entries");
                }
            }
        }
        let exit = -(&t * DVector::from_element(k, 1.0));
        if exit.iter().any(|v| *v < -1e-12 * t.amax()) {
            return bad("row sums of T must be nonpositive");
        }
        if t.clone().try_inverse().is_none() {
            return bad("T is singular, so absorption is not certain");
        }
        Ok(Self { nu, t, exit: exit.map(|v| v.max(0.0)) })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, -rate))
    }

    /// Sum of independent `Exp(first)` and `Exp(second)` stages.
    pub fn convolution(first: f64, second: f64) -> Result<Self> {
        Self::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::from_row_slice(2, 2, &[-first, first, 0.0, -second]))
    }

    /// Exit-rate vector `−T·1`.
    pub fn exit_rates(&self) -> &DVector<f64> {
        &self.exit
    }

    fn survival_vector(&self, t: f64) -> DVector<f64> {
        (self.t.clone() * t).exp().transpose() * &self.nu
    }

    pub fn eval(&self, t: f64) -> PhaseTypeValue {
        if t < 0.0 {
            return PhaseTypeValue { density: 0.0, cdf: 0.0, mean: self.mean() };
        }
        let v = self.survival_vector(t);
        PhaseTypeValue { density: v.dot(&self.exit).max(0.0), cdf: (1.0 - v.sum()).clamp(0.0, 1.0), mean: self.mean() }
    }

    /// Rate of the slowest-decaying phase, a natural time scale.
    pub fn slowest_rate(&self) -> f64 {
        (0..self.t.nrows()).map(|i| -self.t[(i, i)]).fold(f64::INFINITY, f64::min)
    }
}

impl WaitingTime for PhaseType {
    fn density(&self, t: f64) -> f64 {
        self.eval(t).density
    }

    fn mean(&self) -> f64 {
        let k = self.nu.len();
        let inv = self.t.clone().try_inverse().expect("validated at construction");
        -(self.nu.transpose() * inv * DVector::from_element(k, 1.0))[(0, 0)]
    }

    fn log_ratio_to_exponential(&self, t: f64, rate: f64) -> f64 {
        let k = self.nu.len();
        let shifted = (&self.t + DMatrix::identity(k, k) * rate) * t;
        let v = shifted.exp().transpose() * &self.nu;
        (v.dot(&self.exit) / rate).ln()
    }
}

/// `(density, cdf, mean)` of a phase-type law at `t`.
pub fn phase_type_eval(pt: &PhaseType, t: f64) -> (f64, f64, f64) {
    let v = pt.eval(t);
    (v.density, v.cdf, v.mean)
}

/// Relative entropy `R(h̃ ‖ Exp(rate))` of a single waiting time.
pub fn waiting_time_rel_ent<W: WaitingTime + ?Sized>(alt: &W, rate: f64) -> Result<f64> {
    let spec = QuadratureSpec::default().with_abs_tol(1e-15);
    let f = |t: f64| {
        let h = alt.density(t);
        if h <= 0.0 {
            0.0
        } else {
            h * alt.log_ratio_to_exponential(t, rate)
        }
    };
    let scale = alt.mean().max(1.0 / rate);
    Ok(integrate_positive_line(f, scale, &spec)?.max(0.0))
}

/// Tail mass below which states are dropped from stationary sums.
const STATE_TAIL: f64 = 1e-14;

/// Entropy rate of a semi-Markov process that shares the jump chain of a
/// Markov jump process with rates `base_rates` and replaces the waiting time
/// in state `x` by `alt[x]`.
///
/// `pi` is the stationary law of the jump chain.
pub fn semi_markov_rate<W: WaitingTime>(pi: &[f64], base_rates: &[f64], alt: &[W]) -> Result<f64> {
    if pi.len() != base_rates.len() || pi.len() != alt.len() {
        return Err(RelEntError::InvalidInput("pi, rates and waiting laws need equal lengths".into()));
    }
    let mut suffix = vec![0.0; pi.len() + 1];
    for x in (0..pi.len()).rev() {
        suffix[x] = suffix[x + 1] + pi[x];
    }
    let (mut per_jump, mut sojourn) = (0.0, 0.0);
    for x in 0..pi.len() {
        if suffix[x] < STATE_TAIL {
            break;
        }
        if pi[x] == 0.0 {
            continue;
        }
        per_jump += pi[x] * waiting_time_rel_ent(&alt[x], base_rates[x])?;
        sojourn += pi[x] * alt[x].mean();
    }
    if !(sojourn.is_finite() && sojourn > 0.0) {
        return Err(RelEntError::NonErgodic);
    }
    Ok(per_jump / sojourn)
}

/// Jump rate `α + ρx` of the M/M/∞ queue in state `x`.
pub fn queue_jump_rate(alpha: f64, rho: f64, x: usize) -> f64 {
    alpha + rho * x as f64
}

/// Stationary law of the M/M/∞ jump chain, truncated once the retained mass
/// exceeds `1 − 1e-12`.
pub fn queue_jump_stationary(alpha: f64, rho: f64) -> Vec<f64> {
    let ratio = alpha / rho;
    let mut out = Vec::new();
    let mut cumulative = 0.0;
    for x in 0.. {
        let xf = x as f64;
        let log_p = (alpha + rho * xf).ln() + xf * ratio.ln() - libm::lgamma(xf + 1.0) - ratio - (2.0 * alpha).ln();
        let p = log_p.exp();
        out.push(p);
        cumulative += p;
        if cumulative > 1.0 - 1e-12 || (xf > ratio && p < 1e-300) {
            break;
        }
    }
    out
}

/// Uncertainty class of convolution waiting times `Exp(λ) * Exp(γ)` with
/// `δ ≤ λ/γ ≤ ε`, attached to an M/M/∞ queue with arrival rate `alpha` and
/// service rate `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiMarkovEnvelope {
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub rho: f64,
}

impl SemiMarkovEnvelope {
    pub fn new(delta: f64, epsilon: f64, alpha: f64, rho: f64) -> Result<Self> {
        if !(0.0 <= delta && delta <= epsilon && epsilon < 1.0) {
            return Err(RelEntError::InvalidInput(format!("need 0 <= delta <= epsilon < 1, got ({delta}, {epsilon})")));
        }
        if !(alpha > 0.0 && rho > 0.0) {
            return Err(RelEntError::InvalidInput(format!("rates must be positive, got ({alpha}, {rho})")));
        }
        Ok(Self { delta, epsilon, alpha, rho })
    }

    /// Upper bound `α·r(δ, ε)` on the entropy rate.
    pub fn rate_bound(&self) -> Result<f64> {
        Ok(self.alpha * convolution_envelope_rate(self)?)
    }
}

/// The dimensionless envelope `r(δ, ε)`; entropy rates of the class are at
/// most `α·r(δ, ε)`, with equality when `λ/γ ≡ δ = ε`.
pub fn convolution_envelope_rate(env: &SemiMarkovEnvelope) -> Result<f64> {
    let (delta, eps) = (env.delta, env.epsilon);
    if !(0.0 <= delta && delta <= eps && eps < 1.0) {
        return Err(RelEntError::InvalidInput(format!("need 0 <= delta <= epsilon < 1, got ({delta}, {eps})")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let log_one_minus_eps = (-eps).ln_1p();
    if delta == 0.0 {
        // the slow stage disappears and only the constant branch remains
        return Ok(-2.0 * log_one_minus_eps / (1.0 - eps));
    }
    let fast = 1.0 / delta - 1.0;
    let slow = 1.0 / eps - 1.0;
    let switch = -eps.ln() / fast;
    let log_term = |u: f64| (-(-fast * u).exp_m1()).ln() - log_one_minus_eps;
    let inner = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let weight = -(-slow * u).exp_m1() / (1.0 - delta);
        (-u).exp() * weight * log_term(u)
    };
    let outer = |u: f64| {
        let weight = -(-fast * u).exp_m1() / (1.0 - eps);
        (-u).exp() * weight * log_term(u)
    };
    let spec = QuadratureSpec::default().with_abs_tol(1e-15);
    let head = integrate_interval(inner, 0.0, switch, &spec)?;
    let tail =
        integrate_interval(outer, switch, switch + 1.0, &spec)? + integrate_tail(outer, switch + 1.0, 1.0, &spec)?;
    Ok((2.0 / (1.0 + delta) * (head + tail)).max(0.0))
}

/// Baseline and alternative Markov chains on a finite state set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChainPair {
    pub base: DMatrix<f64>,
    pub alt: DMatrix<f64>,
    pub base_init: DVector<f64>,
    pub alt_init: DVector<f64>,
}

const MAX_ENUM_STATES: usize = 6;
const MAX_ENUM_HORIZON: usize = 12;

fn is_stochastic_vector<'a>(v: impl Iterator<Item = &'a f64>) -> bool {
    let mut sum = 0.0;
    for p in v {
        if !(*p >= 0.0 && *p <= 1.0) {
            return false;
        }
        sum += p;
    }
    (sum - 1.0).abs() < 1e-12
}

impl DiscreteChainPair {
    pub fn new(base: DMatrix<f64>, alt: DMatrix<f64>, base_init: DVector<f64>, alt_init: DVector<f64>) -> Result<Self> {
        let n = base.nrows();
        if base.ncols() != n || alt.shape() != (n, n) || base_init.len() != n || alt_init.len() != n {
            return Err(RelEntError::InvalidInput("chain dimensions disagree".into()));
        }
        for m in [&base, &alt] {
            if !(0..n).all(|i| is_stochastic_vector(m.row(i).iter())) {
                return Err(RelEntError::InvalidInput("transition rows must be probability vectors".into()));
            }
        }
        if !is_stochastic_vector(base_init.iter()) || !is_stochastic_vector(alt_init.iter()) {
            return Err(RelEntError::InvalidInput("initial laws must be probability vectors".into()));
        }
        for i in 0..n {
            if alt_init[i] > 0.0 && base_init[i] == 0.0 {
                return Err(RelEntError::AbsContViolation { from: i, to: i });
            }
            for j in 0..n {
                if alt[(i, j)] > 0.0 && base[(i, j)] == 0.0 {
                    return Err(RelEntError::AbsContViolation { from: i, to: j });
                }
            }
        }
        Ok(Self { base, alt, base_init, alt_init })
    }

    /// Both chains started from the same deterministic state.
    pub fn from_state(base: DMatrix<f64>, alt: DMatrix<f64>, start: usize) -> Result<Self> {
        let n = base.nrows();
        if start >= n {
            return Err(RelEntError::InvalidInput(format!("start state {start} out of range")));
        }
        let init = DVector::from_fn(n, |i, _| if i == start { 1.0 } else { 0.0 });
        Self::new(base, alt, init.clone(), init)
    }

    pub fn states(&self) -> usize {
        self.base.nrows()
    }

    fn check_enumerable(&self, stop: &[bool], horizon: usize) -> Result<()> {
        if stop.len() != self.states() {
            return Err(RelEntError::InvalidInput("stopping set must flag every state".into()));
        }
        if self.states() > MAX_ENUM_STATES || horizon > MAX_ENUM_HORIZON {
            return Err(RelEntError::StateSpaceTooLarge { states: self.states(), horizon });
        }
        Ok(())
    }

    /// Visits every path stopped at `τ∧N`, passing its baseline and
    /// alternative probabilities.
    fn for_each_stopped_path(&self, stop: &[bool], horizon: usize, visit: &mut dyn FnMut(f64, f64)) {
        fn walk(
            pair: &DiscreteChainPair,
            stop: &[bool],
            left: usize,
            x: usize,
            p: f64,
            q: f64,
            visit: &mut dyn FnMut(f64, f64),
        ) {
            if left == 0 || stop[x] {
                visit(p, q);
                return;
            }
            for y in 0..pair.states() {
                let (py, qy) = (pair.base[(x, y)], pair.alt[(x, y)]);
                if py > 0.0 || qy > 0.0 {
                    walk(pair, stop, left - 1, y, p * py, q * qy, visit);
                }
            }
        }
        for x in 0..self.states() {
            let (p, q) = (self.base_init[x], self.alt_init[x]);
            if p > 0.0 || q > 0.0 {
                walk(self, stop, horizon, x, p, q, visit);
            }
        }
    }
}

fn kl_term(q: f64, p: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * (q / p).ln()
    }
}

/// Relative entropy of the alternative chain to the baseline on paths
/// stopped at `τ∧N`, with `τ` the first visit to a flagged state, computed by
/// enumerating every stopped path.
pub fn discrete_chain_stopped_rel_ent(pair: &DiscreteChainPair, stop: &[bool], horizon: usize) -> Result<f64> {
    pair.check_enumerable(stop, horizon)?;
    let mut total = 0.0;
    pair.for_each_stopped_path(stop, horizon, &mut |p, q| total += kl_term(q, p));
    Ok(total)
}

/// Same quantity as [`discrete_chain_stopped_rel_ent`], accumulated step by
/// step: the initial-law divergence plus, at each step, the mass still
/// running times the per-state transition divergence.
pub fn discrete_chain_stopped_rel_ent_recursive(
    pair: &DiscreteChainPair,
    stop: &[bool],
    horizon: usize,
) -> Result<f64> {
    if stop.len() != pair.states() {
        return Err(RelEntError::InvalidInput("stopping set must flag every state".into()));
    }
    let n = pair.states();
    let row_kl: Vec<f64> = (0..n).map(|x| (0..n).map(|y| kl_term(pair.alt[(x, y)], pair.base[(x, y)])).sum()).collect();
    let mut total: f64 = (0..n).map(|x| kl_term(pair.alt_init[x], pair.base_init[x])).sum();
    let mut running: Vec<f64> = (0..n).map(|x| if stop[x] { 0.0 } else { pair.alt_init[x] }).collect();
    for _ in 0..horizon {
        total += running.iter().zip(&row_kl).map(|(m, k)| m * k).sum::<f64>();
        let mut next = vec![0.0; n];
        for (x, m) in running.iter().enumerate() {
            for y in (0..n).filter(|y| !stop[*y]) {
                next[y] += m * pair.alt[(x, y)];
            }
        }
        running = next;
    }
    Ok(total)
}

/// CGF under the baseline of the stopped log-likelihood ratio
/// `log dP̃/dP`, by enumeration. Feeds the relative-entropy bootstrap.
pub fn discrete_chain_log_ratio_cgf(pair: &DiscreteChainPair, stop: &[bool], horizon: usize) -> Result<CgfHandle> {
    pair.check_enumerable(stop, horizon)?;
    let mut atoms = Vec::new();
    pair.for_each_stopped_path(stop, horizon, &mut |p, q| {
        if p > 0.0 {
            atoms.push((p, if q > 0.0 { (q / p).ln() } else { f64::NEG_INFINITY }));
        }
    });
    let eval = move |lam: f64| {
        if lam > 0.5 && lam < 2.0 {
            // Σ p e^{λg} = 1 + Σ q(e^{(λ−1)g} − 1) keeps the small increments
            // near λ = 1 that the bootstrap divides by λ − 1
            let s: f64 = atoms
                .iter()
                .filter(|(_, g)| g.is_finite())
                .map(|(p, g)| p * g.exp() * ((lam - 1.0) * g).exp_m1())
                .sum();
            return s.ln_1p();
        }
        let terms = atoms.iter().filter(|(_, g)| *g > f64::NEG_INFINITY || lam <= 0.0).map(|(p, g)| {
            if *g == f64::NEG_INFINITY {
                if lam == 0.0 {
                    (p.ln(), 0.0)
                } else {
                    (p.ln(), f64::INFINITY)
                }
            } else {
                (p.ln(), lam * g)
            }
        });
        let mut max = f64::NEG_INFINITY;
        let collected: Vec<(f64, f64)> = terms.collect();
        for (lp, e) in &collected {
            max = max.max(lp + e);
        }
        if !max.is_finite() {
            return max;
        }
        max + collected.iter().map(|(lp, e)| (lp + e - max).exp()).sum::<f64>().ln()
    };
    Ok(CgfHandle::new(eval, f64::INFINITY, false))
}

/// Jump rates `λ(x)` and jump-chain transition matrix `a(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcModel {
    pub rates: Vec<f64>,
    pub jump: DMatrix<f64>,
}

impl CtmcModel {
    pub fn new(rates: Vec<f64>, jump: DMatrix<f64>) -> Result<Self> {
        let n = rates.len();
        if jump.shape() != (n, n) {
            return Err(RelEntError::InvalidInput("jump matrix must match the number of rates".into()));
        }
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(RelEntError::InvalidInput("rates must be finite and nonnegative".into()));
        }
        for (x, rate) in rates.iter().enumerate() {
            if *rate > 0.0 && !is_stochastic_vector(jump.row(x).iter()) {
                return Err(RelEntError::InvalidInput(format!(
                    "row {x} of the jump matrix is not a probability vector"
                )));
            }
        }
        Ok(Self { rates, jump })
    }

    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.rates.len();
        DMatrix::from_fn(n, n, |x, y| {
            let off = if x == y { 0.0 } else { self.rates[x] * self.jump[(x, y)] };
            if x == y {
                off - self.rates[x] * (1.0 - self.jump[(x, x)])
            } else {
                off
            }
        })
    }

    fn check_dominates(&self, alt: &CtmcModel) -> Result<()> {
        let n = self.rates.len();
        if alt.rates.len() != n {
            return Err(RelEntError::InvalidInput("models have different state counts".into()));
        }
        for x in 0..n {
            for y in 0..n {
                if alt.rates[x] * alt.jump[(x, y)] > 0.0 && self.rates[x] * self.jump[(x, y)] == 0.0 {
                    return Err(RelEntError::AbsContViolation { from: x, to: y });
                }
            }
        }
        Ok(())
    }
}

/// A CTMC trajectory: visited states with their holding times. The last
/// holding time is the (possibly censored) time spent in the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    pub states: Vec<usize>,
    pub holding: Vec<f64>,
}

fn log_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        0.0
    } else {
        (num / den).ln()
    }
}

/// Log-likelihood ratio `log dP̃/dP` of a path, excluding the initial law.
pub fn ctmc_path_loglik(path: &CtmcPath, base: &CtmcModel, alt: &CtmcModel) -> Result<f64> {
    base.check_dominates(alt)?;
    if path.states.len() != path.holding.len() || path.states.is_empty() {
        return Err(RelEntError::InvalidInput("path needs one holding time per visited state".into()));
    }
    let mut total = 0.0;
    for (i, (&x, &h)) in path.states.iter().zip(&path.holding).enumerate() {
        total -= (alt.rates[x] - base.rates[x]) * h;
        if let Some(&y) = path.states.get(i + 1) {
            total += log_ratio(alt.rates[x] * alt.jump[(x, y)], base.rates[x] * base.jump[(x, y)]);
        }
    }
    Ok(total)
}

/// Exact `R(P̃|_{F_t} ‖ P|_{F_t})` for chains started from the same law:
/// the time integral of the alternative occupation law against the
/// per-state entropy production rate.
pub fn ctmc_rel_ent_exact(base: &CtmcModel, alt: &CtmcModel, init: &DVector<f64>, horizon: f64) -> Result<f64> {
    base.check_dominates(alt)?;
    let n = base.rates.len();
    if init.len() != n {
        return Err(RelEntError::InvalidInput("initial law has the wrong length".into()));
    }
    let production = DVector::from_fn(n, |x, _| {
        let mut k = base.rates[x] - alt.rates[x];
        for y in 0..n {
            let q = alt.rates[x] * alt.jump[(x, y)];
            if q > 0.0 {
                k += q * (q / (base.rates[x] * base.jump[(x, y)])).ln();
            }
        }
        k
    });
    // ∫₀^t e^{Q̃s} ds is the upper-right block of exp([[Q̃, I], [0, 0]] t)
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&alt.generator());
    block.view_mut((0, n), (n, n)).fill_with_identity();
    let occupation = (block * horizon).exp().view((0, n), (n, n)).into_owned();
    Ok((init.transpose() * occupation * production)[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::rel_ent_bootstrap;

    #[test]
    fn girsanov_budgets() {
        assert_eq!(girsanov_sde_budget(0.0).k, 0.0);
        assert!((girsanov_sde_budget(0.2).k - 0.02).abs() < 1e-15);
        assert_eq!(girsanov_sde_budget(0.5).k, 0.125);
        assert_eq!(girsanov_sde_budget(0.5).eta0, 0.0);
    }

    #[test]
    fn discounted_budgets() {
        assert!((discounted_rel_ent(|_| 0.3, 2.0).unwrap() - 0.3).abs() < 1e-10);
        assert!((discounted_rel_ent(|s| 0.7 * s, 0.5).unwrap() - 1.4).abs() < 1e-10);
        assert!((discounted_rel_ent(|s| 0.125 * s, 0.5).unwrap() - 0.25).abs() < 1e-10);
        assert!(discounted_rel_ent(|s| (s * s).exp(), 1.0).is_err());
    }

    #[test]
    fn phase_type_closed_forms() {
        let e = PhaseType::exponential(2.0).unwrap();
        for t in [0.0f64, 0.3, 2.0] {
            let (d, c, m) = phase_type_eval(&e, t);
            assert!((d - 2.0 * (-2.0 * t).exp()).abs() < 1e-13);
            assert!((c - (1.0 - (-2.0 * t).exp())).abs() < 1e-13);
            assert_eq!(m, 0.5);
        }
        let conv = PhaseType::convolution(1.0, 3.0).unwrap();
        assert_eq!(conv.eval(0.0).density, 0.0);
        for t in [0.1f64, 0.7, 3.0, 9.0] {
            let exact = 1.5 * ((-t).exp() - (-3.0 * t).exp());
            assert!((conv.eval(t).density - exact).abs() < 1e-13, "{t}");
        }
        assert!((conv.mean() - (1.0 + 1.0 / 3.0)).abs() < 1e-13);
        assert!(PhaseType::new(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 1.0)).is_err());
        assert!(PhaseType::new(DVector::from_vec(vec![0.5, 0.4]), DMatrix::identity(2, 2) * -1.0).is_err());
    }

    #[test]
    fn identical_waiting_times_have_zero_rate() {
        let rates = [1.0, 2.0, 3.0];
        let alt: Vec<PhaseType> = rates.iter().map(|r| PhaseType::exponential(*r).unwrap()).collect();
        let h = semi_markov_rate(&[0.2, 0.5, 0.3], &rates, &alt).unwrap();
        assert!(h.abs() < 1e-12);
    }

    #[test]
    fn queue_stationary_law_sums_to_one() {
        for (alpha, rho) in [(1.0, 1.0), (3.0, 0.5), (0.2, 2.0)] {
            let pi = queue_jump_stationary(alpha, rho);
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-11);
            // stationarity under the jump chain
            for y in 1..pi.len().saturating_sub(1) {
                let from_below = pi[y - 1] * alpha / queue_jump_rate(alpha, rho, y - 1);
                let from_above = pi[y + 1] * rho * (y + 1) as f64 / queue_jump_rate(alpha, rho, y + 1);
                assert!((from_below + from_above - pi[y]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convolution_rate_meets_envelope() {
        let (alpha, rho, eps) = (1.0, 1.0, 0.05);
        let pi = queue_jump_stationary(alpha, rho);
        let rates: Vec<f64> = (0..pi.len()).map(|x| queue_jump_rate(alpha, rho, x)).collect();
        let alt: Vec<PhaseType> = rates.iter().map(|l| PhaseType::convolution(*l, l / eps).unwrap()).collect();
        let h = semi_markov_rate(&pi, &rates, &alt).unwrap();
        let env = SemiMarkovEnvelope::new(eps, eps, alpha, rho).unwrap();
        let bound = env.rate_bound().unwrap();
        assert!(h > 0.0);
        // λ/γ is constant here, so the envelope is attained
        assert!((h - bound).abs() < 1e-8 * bound, "{h} vs {bound}");
        // and a spread of ratios stays below it
        let env = SemiMarkovEnvelope::new(0.02, 0.1, alpha, rho).unwrap();
        let spread: Vec<PhaseType> = rates
            .iter()
            .enumerate()
            .map(|(x, l)| PhaseType::convolution(*l, l / [0.02, 0.06, 0.1][x % 3]).unwrap())
            .collect();
        assert!(semi_markov_rate(&pi, &rates, &spread).unwrap() <= env.rate_bound().unwrap());
    }

    #[test]
    fn envelope_rate_limits_and_monotonicity() {
        let r = |d: f64, e: f64| convolution_envelope_rate(&SemiMarkovEnvelope::new(d, e, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(r(0.0, 0.0), 0.0);
        let diag: Vec<f64> = [0.2, 0.1, 0.05, 0.01, 0.001].iter().map(|e| r(*e, *e)).collect();
        assert!(diag.windows(2).all(|w| w[1] < w[0]));
        // 30-digit reference values of the single-ratio integral
        for (v, exact) in diag.iter().zip([
            0.122_302_366_314_903_74,
            0.065_614_777_978_409_69,
            0.034_090_256_863_609_11,
            0.007_042_340_231_498_705,
            0.000_709_536_595_762_476_3,
        ]) {
            assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        }
        let along: Vec<f64> = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3].iter().map(|d| r(*d, 0.3)).collect();
        assert!(along.windows(2).all(|w| w[1] < w[0]), "{along:?}");
        assert!((r(0.0, 0.3) - (-2.0 * 0.7f64.ln() / 0.7)).abs() < 1e-14);
        // direct integration of the single-ratio formula
        let eps: f64 = 0.3;
        let g = |u: f64| -(-(1.0 / eps - 1.0) * u).exp_m1() / (1.0 - eps);
        let spec = QuadratureSpec::default();
        let direct =
            integrate_positive_line(|u| if u > 0.0 { (-u).exp() * g(u) * g(u).ln() } else { 0.0 }, 1.0, &spec).unwrap();
        assert!((r(eps, eps) - 2.0 / (1.0 + eps) * direct).abs() < 1e-10);
    }

    fn two_state_pair() -> DiscreteChainPair {
        let base = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let alt = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.5, 0.5]);
        DiscreteChainPair::from_state(base, alt, 0).unwrap()
    }

    #[test]
    fn two_state_enumeration_matches_visit_count() {
        let pair = two_state_pair();
        let stop = [false, true];
        let exact = discrete_chain_stopped_rel_ent(&pair, &stop, 6).unwrap();
        // visits to state 0 before absorption ∧ 6 under the alternative
        let visits: f64 = (0..6).map(|i| 0.8f64.powi(i)).sum();
        let kl = 0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln();
        assert!((exact - visits * kl).abs() < 1e-14);
        assert!(
            discrete_chain_stopped_rel_ent(
                &DiscreteChainPair::from_state(pair.base.clone(), pair.base.clone(), 0).unwrap(),
                &stop,
                6
            )
            .unwrap()
                == 0.0
        );
    }

    #[test]
    fn enumeration_matches_recursion_and_bootstrap_dominates() {
        let base = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8]);
        let alt = DMatrix::from_row_slice(3, 3, &[0.3, 0.3, 0.4, 0.6, 0.2, 0.2, 0.1, 0.1, 0.8]);
        let init = DVector::from_vec(vec![0.5, 0.3, 0.2]);
        let alt_init = DVector::from_vec(vec![0.6, 0.3, 0.1]);
        let pair = DiscreteChainPair::new(base, alt, init, alt_init).unwrap();
        let stop = [false, false, true];
        let mut prev = 0.0;
        for n in 0..=8 {
            let e = discrete_chain_stopped_rel_ent(&pair, &stop, n).unwrap();
            let r = discrete_chain_stopped_rel_ent_recursive(&pair, &stop, n).unwrap();
            assert!((e - r).abs() < 1e-12, "{n}: {e} vs {r}");
            assert!(e >= prev - 1e-15);
            prev = e;
            let boot = rel_ent_bootstrap(&discrete_chain_log_ratio_cgf(&pair, &stop, n).unwrap()).unwrap();
            assert!(boot.value >= e - 1e-9, "{n}: {} < {e}", boot.value);
        }
        assert!(matches!(
            discrete_chain_stopped_rel_ent(&pair, &stop, 13),
            Err(RelEntError::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn absolute_continuity_is_enforced() {
        let base = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let alt = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        assert_eq!(DiscreteChainPair::from_state(base, alt, 0), Err(RelEntError::AbsContViolation { from: 0, to: 1 }));
    }

    #[test]
    fn ctmc_log_likelihood_cases() {
        let jump = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let base = CtmcModel::new(vec![1.5, 0.5], jump.clone()).unwrap();
        let path = CtmcPath { states: vec![0, 1, 0], holding: vec![0.3, 1.1, 0.2] };
        assert_eq!(ctmc_path_loglik(&path, &base, &base).unwrap(), 0.0);
        let doubled = CtmcModel::new(vec![3.0, 1.0], jump).unwrap();
        let one_jump = CtmcPath { states: vec![0, 1], holding: vec![0.4, 0.0] };
        let v = ctmc_path_loglik(&one_jump, &base, &doubled).unwrap();
        assert!((v - (2f64.ln() - 1.5 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn ctmc_exact_entropy_matches_quadrature() {
        let jump = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let base = CtmcModel::new(vec![1.0, 2.0], jump.clone()).unwrap();
        let alt = CtmcModel::new(vec![1.5, 1.0], jump).unwrap();
        let init = DVector::from_vec(vec![1.0, 0.0]);
        let exact = ctmc_rel_ent_exact(&base, &alt, &init, 2.0).unwrap();
        let q = alt.generator();
        let k = |x: usize| {
            let (l, lt) = (base.rates[x], alt.rates[x]);
            lt * (lt / l).ln() - lt + l
        };
        let spec = QuadratureSpec::default();
        let direct = integrate_interval(
            |s| {
                let p = (q.clone() * s).exp().transpose() * &init;
                p[0] * k(0) + p[1] * k(1)
            },
            0.0,
            2.0,
            &spec,
        )
        .unwrap();
        assert!((exact - direct).abs() < 1e-10);
        assert!(ctmc_rel_ent_exact(&base, &base, &init, 2.0).unwrap().abs() < 1e-14);
    }
}

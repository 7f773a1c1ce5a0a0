//! Bound curves for the worked examples: hitting times of a drifted Brownian
//! motion, invariant measures of a non-reversible diffusion, a linear-quadratic
//! controller, a semi-Markov queue, and perpetual American puts under
//! perturbed interest rates.
//!
//! Every grid point is computed independently and rows come back in grid
//! order.

mod config;
mod table;
mod validation;

use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::{
    event_prob_bound, info_bound, rel_ent_bootstrap, stopping_time_mean_bound, tilted_bound, BoundError, BoundResult,
    CgfHandle, ExpectationLaw, HittingTimeLaw, Side, TiltedExpectation,
};
use crate::cgf::{log_normal_sf, CgfError, DriftedBmHittingLaw, OuSquaredIntegral, QueueCgfLimit};
use crate::linear_gaussian::{control_cost_bound, LqError, LqProblem};
use crate::mc::McError;
use crate::numerics::{gauss_legendre, minimize_scalar, NumericsError, ScalarObjective};
use crate::relent::{convolution_envelope_rate, girsanov_sde_budget, RelEntError, SemiMarkovEnvelope};

pub use config::{run_scenario, ParamValue, ScenarioConfig, ScenarioId, Sweep};
pub use table::{format_real, CurveRow, CurveTable, RowStatus, TableError, CSV_HEADER};
pub use validation::{validate_scenario, ValidationCheck, ValidationSettings};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("level a = {a} and drift mu = {mu} of the hitting law have opposite signs")]
    SignMismatch { a: f64, mu: f64 },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("entropy bootstrap needs lambda > 1 below {limit}, the end of the integrable range")]
    BranchExceeded { limit: f64 },
    #[error("grid point {index} (sweep = {sweep}): {source}")]
    GridPoint { index: usize, sweep: f64, source: Box<ScenarioError> },
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Cgf(CgfError),
    #[error(transparent)]
    RelEnt(#[from] RelEntError),
    #[error(transparent)]
    Lq(#[from] LqError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Simulation(#[from] McError),
}

impl From<CgfError> for ScenarioError {
    fn from(e: CgfError) -> Self {
        match e {
            CgfError::SignMismatch { a, mu } => ScenarioError::SignMismatch { a, mu },
            other => ScenarioError::Cgf(other),
        }
    }
}

impl ScenarioError {
    fn at(self, index: usize, sweep: f64) -> Self {
        match self {
            ScenarioError::GridPoint { source, .. } => ScenarioError::GridPoint { index, sweep, source },
            e => ScenarioError::GridPoint { index, sweep, source: Box::new(e) },
        }
    }

    /// `true` for errors caused by the inputs rather than the numerics.
    pub fn is_config(&self) -> bool {
        match self {
            ScenarioError::Config(_) | ScenarioError::SignMismatch { .. } | ScenarioError::AssumptionViolated(_) => {
                true
            }
            ScenarioError::GridPoint { source, .. } => source.is_config(),
            ScenarioError::Bound(BoundError::InvalidInput(_))
            | ScenarioError::Cgf(_)
            | ScenarioError::RelEnt(RelEntError::InvalidInput(_) | RelEntError::InvalidPhaseType(_))
            | ScenarioError::Lq(LqError::InvalidProblem(_))
            | ScenarioError::Simulation(_) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ScenarioError::Config(msg.into()))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return config_err("grid is empty");
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return config_err("grid values must be finite");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return config_err("grid must be strictly increasing");
    }
    Ok(())
}

fn grid_rows(grid: &[f64], point: impl Fn(f64) -> Result<CurveRow> + Sync) -> Result<CurveTable> {
    check_grid(grid)?;
    let rows =
        grid.par_iter().enumerate().map(|(i, &x)| point(x).map_err(|e| e.at(i, x))).collect::<Result<Vec<_>>>()?;
    Ok(CurveTable::new(rows))
}

fn hitting_law(a: f64, mu: f64) -> Result<DriftedBmHittingLaw> {
    let law = DriftedBmHittingLaw::new(a, mu)?;
    if !law.same_sign() {
        return Err(ScenarioError::SignMismatch { a, mu });
    }
    Ok(law)
}

fn check_nonnegative(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        config_err(format!("{name} must be finite and nonnegative, got {x}"))
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        config_err(format!("{name} must be finite and positive, got {x}"))
    }
}

/// Goal-oriented interval for `P̃(τ_a ≤ T)` under drift perturbations bounded
/// by `alpha`, with the budget `½α²·E[τ_a∧T]`, plus the interval from the
/// fixed-horizon budget `½α²T` as reference. Both are clamped to `[0, 1]`.
pub fn bm_cdf_bounds(mu: f64, a: f64, alpha: f64, horizons: &[f64]) -> Result<CurveTable> {
    let law = hitting_law(a, mu)?;
    check_nonnegative("alpha", alpha)?;
    let k = 0.5 * alpha * alpha;
    grid_rows(horizons, |t| {
        check_positive("horizon", t)?;
        let p = law.cdf(t);
        let tilted = TiltedExpectation::new(
            HittingTimeLaw::new(law).with_breakpoints([t]),
            move |tau: &f64| if *tau <= t { 1.0 } else { 0.0 },
            move |tau: &f64| k * tau.min(t),
        );
        let up = tilted_bound(&tilted, Side::Upper)?;
        let lo = tilted_bound(&tilted, Side::Lower)?;
        let (ref_lo, ref_up) = event_prob_bound(p, k * t)?;
        Ok(CurveRow {
            sweep: Some(t),
            baseline: p,
            lower: lo.value.clamp(0.0, 1.0),
            upper: up.value.clamp(0.0, 1.0),
            ref_lower: Some(ref_lo),
            ref_upper: Some(ref_up),
            status: RowStatus::from_bounds([lo.status, up.status]),
        })
    })
}

/// Lower and upper bounds on `E_P̃[τ_a]` for drift perturbations bounded by
/// `alpha`; the optimizers are `c*` and `λ*`.
pub fn hitting_mean_interval(mu: f64, a: f64, alpha: f64) -> Result<(BoundResult, BoundResult)> {
    let law = hitting_law(a, mu)?;
    if !(alpha >= 0.0 && alpha < mu.abs()) {
        return config_err(format!("need 0 <= alpha < |mu|, got alpha = {alpha}, mu = {mu}"));
    }
    Ok(stopping_time_mean_bound(&law.cgf_handle()?, girsanov_sde_budget(alpha))?)
}

/// Single-row table for `E_P̃[τ_a]`; references are the comparison-principle
/// values `|a|/(|μ| ± α)`.
pub fn bm_mean_bounds(mu: f64, a: f64, alpha: f64) -> Result<CurveTable> {
    let (lo, up) = hitting_mean_interval(mu, a, alpha)?;
    Ok(CurveTable::new(vec![CurveRow {
        sweep: None,
        baseline: a / mu,
        lower: lo.value,
        upper: up.value,
        ref_lower: Some(a.abs() / (mu.abs() + alpha)),
        ref_upper: Some(a.abs() / (mu.abs() - alpha)),
        status: RowStatus::from_bounds([lo.status, up.status]),
    }]))
}

/// Modified Bessel function `I_n(z)` for `z ≥ 0` from its power series.
fn bessel_i(n: usize, z: f64) -> f64 {
    let half = 0.5 * z;
    let mut term = (1..=n).fold(1.0, |acc, k| acc * half / k as f64);
    let mut sum = term;
    let q = half * half;
    for m in 0..500 {
        term *= q / ((m + 1) as f64 * (m + 1 + n) as f64);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `E[exp(z·cos 2x)]` (or with `−z` when `flip`) for `x ~ N(0, s2)`, from
/// the Fourier series `e^{z cos θ} = I₀(z) + 2Σ I_n(z) cos nθ`.
fn cosine_exponential_mean(z: f64, s2: f64, flip: bool) -> f64 {
    let i0 = bessel_i(0, z);
    let mut sum = i0;
    for n in 1..400 {
        let i_n = bessel_i(n, z);
        let sign = if flip && n % 2 == 1 { -1.0 } else { 1.0 };
        sum += 2.0 * sign * i_n * (-2.0 * (n * n) as f64 * s2).exp();
        if i_n <= 1e-18 * i0 {
            break;
        }
    }
    sum
}

/// `log E[exp(c‖x‖² + ¼‖b(x)‖²)]` for `x ~ N(0, I/2)` in the plane and the
/// drift `b(x) = C(−sin x₂, cos x₁)`; `+inf` for `c ≥ 1`.
pub fn nonrev_log_mean(c: f64, strength: f64) -> f64 {
    if c >= 1.0 {
        return f64::INFINITY;
    }
    // ¼‖b‖² = k(sin²x₂ + cos²x₁) with sin²x = (1 − cos 2x)/2, cos²x = (1 + cos 2x)/2
    let k = 0.25 * strength * strength;
    let s2 = 0.5 / (1.0 - c);
    let z = 0.5 * k;
    -(-c).ln_1p() + k + cosine_exponential_mean(z, s2, false).ln() + cosine_exponential_mean(z, s2, true).ln()
}

/// Bounds on `∫‖x‖² dμ̃` for the invariant measure `μ̃` of the diffusion with
/// potential `‖x‖²` and added drift `C(−sin x₂, cos x₁)`, one row per `C`.
/// References use the entropy-rate bound `sup‖b‖²/4 = C²/2` with the same
/// log-Sobolev cumulant bound.
pub fn nonrev_bounds(strengths: &[f64]) -> Result<CurveTable> {
    grid_rows(strengths, |strength| {
        check_nonnegative("C", strength)?;
        let tilted = CgfHandle::new(move |c| nonrev_log_mean(c, strength), 1.0, false);
        let up = info_bound(&tilted, 0.0, Side::Upper)?;
        let lo = info_bound(&tilted, 0.0, Side::Lower)?;
        // ‖x‖² is Exp(1) under N(0, I/2)
        let centered = CgfHandle::new(|c| -(-c).ln_1p() - c, 1.0, true);
        let rate = 0.5 * strength * strength;
        let ref_up = info_bound(&centered, rate, Side::Upper)?;
        let ref_lo = info_bound(&centered, rate, Side::Lower)?;
        Ok(CurveRow {
            sweep: Some(strength),
            baseline: 1.0,
            lower: lo.value,
            upper: up.value,
            ref_lower: Some(1.0 + ref_lo.value),
            ref_upper: Some(1.0 + ref_up.value),
            status: RowStatus::from_bounds([lo.status, up.status]),
        })
    })
}

/// The two-state controller example: `B = [[2, 0.1], [0.1, −1]]`,
/// `D = [κ, 0]ᵀ`, `Q = I`, `R = 1`, `λ = 1/2`, `Σ₀ = 0`, `σ = I`.
pub fn controller_problem(kappa: f64) -> Result<LqProblem> {
    use nalgebra::DMatrix;
    Ok(LqProblem::new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, -1.0]),
        DMatrix::from_column_slice(2, 1, &[kappa, 0.0]),
        DMatrix::identity(2, 2),
        DMatrix::from_element(1, 1, 1.0),
        0.5,
        DMatrix::zeros(2, 2),
        DMatrix::identity(2, 2),
    )?)
}

/// Row for the discounted closed-loop cost of one control problem.
pub fn lq_row(prob: &LqProblem, alpha: f64, sweep: Option<f64>) -> Result<CurveRow> {
    let b = control_cost_bound(prob, alpha)?;
    Ok(CurveRow {
        sweep,
        baseline: b.baseline,
        lower: b.lower.bound.value,
        upper: b.upper.bound.value,
        ref_lower: None,
        ref_upper: None,
        status: RowStatus::from_bounds([b.lower.bound.status, b.upper.bound.status]),
    })
}

/// Cost bounds for the controller example over a grid of gains `κ`.
pub fn lq_bounds(kappas: &[f64], alpha: f64) -> Result<CurveTable> {
    check_nonnegative("alpha", alpha)?;
    grid_rows(kappas, |kappa| lq_row(&controller_problem(kappa)?, alpha, Some(kappa)))
}

/// Relative-error interval `(lower, upper)` for the long-run mean queue
/// length, obtained by minimizing over the tilt with entropy rate `h`.
pub fn queue_relative_error(alpha: f64, rho: f64, h: f64) -> Result<(BoundResult, BoundResult)> {
    let cgf = QueueCgfLimit::new(alpha, rho)?.cgf_handle();
    let scale = alpha / rho;
    let rescale = |b: BoundResult| BoundResult { value: b.value / scale, ..b };
    let up = info_bound(&cgf, h, Side::Upper)?;
    let lo = info_bound(&cgf, h, Side::Lower)?;
    Ok((rescale(lo), rescale(up)))
}

/// Closed-form relative-error interval in terms of `r = H/α`.
pub fn queue_relative_error_closed_form(r: f64) -> (f64, f64) {
    let lower = if r < 1.0 { -(2.0 * r.sqrt() - r) } else { -1.0 };
    (lower, 2.0 * r.sqrt() + r)
}

/// Relative-error bounds for the mean queue length under convolution waiting
/// times with `δ ≤ λ/γ ≤ ε`, one row per `(δ, ε)` pair (swept in `ε`).
pub fn queue_bounds(alpha: f64, rho: f64, deltas: &[f64], epsilons: &[f64]) -> Result<CurveTable> {
    if deltas.len() != epsilons.len() || deltas.is_empty() {
        return config_err("delta and epsilon grids must be nonempty and of equal length");
    }
    let rows = deltas
        .par_iter()
        .zip(epsilons)
        .enumerate()
        .map(|(i, (&delta, &eps))| {
            let row = || -> Result<CurveRow> {
                let r = convolution_envelope_rate(&SemiMarkovEnvelope::new(delta, eps, alpha, rho)?)?;
                let (lo, up) = queue_relative_error(alpha, rho, alpha * r)?;
                let (ref_lo, ref_up) = queue_relative_error_closed_form(r);
                Ok(CurveRow {
                    sweep: Some(eps),
                    baseline: 0.0,
                    lower: lo.value,
                    upper: up.value,
                    ref_lower: Some(ref_lo),
                    ref_upper: Some(ref_up),
                    status: RowStatus::from_bounds([lo.status, up.status]),
                })
            };
            row().map_err(|e| e.at(i, eps))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveTable::new(rows))
}

/// Perpetual American put exercised when the asset falls to `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionMarket {
    pub r: f64,
    pub sigma: f64,
    pub strike: f64,
    pub level: f64,
    pub x0: f64,
}

impl OptionMarket {
    fn validate(&self) -> Result<()> {
        check_positive("sigma", self.sigma)?;
        if !self.r.is_finite() {
            return config_err(format!("r must be finite, got {}", self.r));
        }
        if !(self.level > 0.0 && self.level < self.strike.min(self.x0)) {
            return config_err(format!(
                "need 0 < level < min(strike, x0), got level = {}, strike = {}, x0 = {}",
                self.level, self.strike, self.x0
            ));
        }
        Ok(())
    }

    /// Law of the exercise time under the constant-rate model with `rate`,
    /// as a hitting time of Brownian motion with drift.
    pub fn exercise_law(&self, rate: f64) -> Result<DriftedBmHittingLaw> {
        self.validate()?;
        let a = -(self.x0 / self.level).ln() / self.sigma;
        let mu = rate / self.sigma - 0.5 * self.sigma;
        hitting_law(a, mu)
    }

    /// `(K − L)(L/X₀)^{2·rate/σ²}`.
    pub fn value_at_rate(&self, rate: f64) -> f64 {
        (self.strike - self.level) * (self.level / self.x0).powf(2.0 * rate / (self.sigma * self.sigma))
    }

    pub fn baseline_value(&self) -> f64 {
        self.value_at_rate(self.r)
    }
}

/// Option market with an Ornstein–Uhlenbeck rate perturbation
/// `dΔr = −γΔr dt + σ̃ dW̃`, `Δr₀ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VasicekParams {
    pub market: OptionMarket,
    pub gamma: f64,
    pub sigma_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VasicekSweep {
    SigmaTilde,
    Sigma,
}

/// Components of the interval for the option value conditioned on a
/// nonnegative integrated rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VasicekBound {
    pub lower: f64,
    pub upper: f64,
    pub baseline: f64,
    /// Bootstrapped bound on the goal-oriented relative entropy.
    pub entropy: BoundResult,
    /// Baseline probability of a nonnegative integrated rate at exercise.
    pub event_prob: f64,
    /// Interval for that probability under the alternatives.
    pub event_interval: (f64, f64),
    /// Bounds on the unconditioned payoff expectation.
    pub payoff: (BoundResult, BoundResult),
}

const RATE_NODES: usize = 200;
const RATE_WIDTH: f64 = 10.0;

/// Integrated rate `∫₀ᵗ (r + Δr) ds ~ N(rt, σ̃_t²)`.
struct IntegratedRate {
    r: f64,
    ou: OuSquaredIntegral,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl IntegratedRate {
    fn new(r: f64, ou: OuSquaredIntegral) -> Self {
        let (nodes, weights) = gauss_legendre(RATE_NODES);
        Self { r, ou, nodes, weights }
    }

    /// `log E[exp(s·e^{−Z}·1_{Z≥0})]` at time `t`.
    fn log_tilt(&self, t: f64, s: f64) -> f64 {
        let m = self.r * t;
        let sd = self.ou.integrated_variance(t).sqrt();
        if sd <= 1e-12 * m.abs().max(1.0) {
            return if m >= 0.0 { s * (-m).exp() } else { 0.0 };
        }
        let lo = (m - RATE_WIDTH * sd).max(0.0);
        let hi = m + RATE_WIDTH * sd;
        if hi <= lo {
            return 0.0;
        }
        let (mid, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| {
                let z = mid + half * x;
                let u = (z - m) / sd;
                w * norm * (-0.5 * u * u).exp() * (s * (-z).exp()).exp_m1()
            })
            .sum();
        (half * sum).ln_1p()
    }

    /// `log P(Z ≥ 0)` at time `t`.
    fn log_nonnegative(&self, t: f64) -> f64 {
        let m = self.r * t;
        let sd = self.ou.integrated_variance(t).sqrt();
        if sd == 0.0 {
            return if m >= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        log_normal_sf(-m / sd)
    }
}

fn log_mean_exp(law: &HittingTimeLaw, h: &dyn Fn(&f64) -> f64) -> f64 {
    law.log_mean_exp(h).unwrap_or(f64::NAN)
}

/// Interval for the option value under the rate perturbation, conditioned
/// on a nonnegative integrated rate at exercise.
pub fn vasicek_point(p: &VasicekParams) -> Result<VasicekBound> {
    let m = p.market;
    check_positive("gamma", p.gamma)?;
    check_positive("sigma_tilde", p.sigma_tilde)?;
    let law = m.exercise_law(m.r)?;
    let threshold = p.sigma_tilde * p.sigma_tilde / (2.0 * p.gamma * p.gamma);
    if m.r <= threshold {
        return Err(ScenarioError::AssumptionViolated(format!(
            "need r > sigma_tilde^2/(2 gamma^2) = {threshold}, got r = {}",
            m.r
        )));
    }
    let ou = OuSquaredIntegral::new(p.gamma, p.sigma_tilde, m.sigma)?;
    let times = Arc::new(HittingTimeLaw::new(law));

    // bootstrap the relative entropy from the cumulant of ½σ⁻²∫Δr²
    let branch = ou.branch_point();
    let tail_rate = 0.5 * law.mu * law.mu;
    let ratio = 2.0 * tail_rate / p.gamma;
    let integrable = if ratio >= 1.0 { f64::INFINITY } else { branch * (1.0 - (1.0 - ratio).powi(2)) };
    let limit = branch.min(integrable);
    let g_law = Arc::clone(&times);
    let g_cgf = CgfHandle::new(
        move |lam| log_mean_exp(&g_law, &|t: &f64| ou.log_mgf(*t, lam).unwrap_or(f64::INFINITY)),
        limit,
        false,
    );
    let entropy = match rel_ent_bootstrap(&g_cgf) {
        Err(BoundError::Infinite) => return Err(ScenarioError::BranchExceeded { limit }),
        other => other?,
    };
    let d = entropy.value;

    let rate = Arc::new(IntegratedRate::new(m.r, ou));
    let event_prob = log_mean_exp(&times, &|t: &f64| rate.log_nonnegative(*t)).exp();
    if !event_prob.is_finite() {
        return Err(NumericsError::NonFinite(event_prob).into());
    }
    let event_interval = event_prob_bound(event_prob.min(1.0), d)?;

    let payoff_scale = m.strike - m.level;
    let f_law = Arc::clone(&times);
    let f_rate = Arc::clone(&rate);
    let f_cgf = CgfHandle::new(
        move |c| log_mean_exp(&f_law, &|t: &f64| f_rate.log_tilt(*t, c * payoff_scale)),
        f64::INFINITY,
        false,
    );
    let up = info_bound(&f_cgf, d, Side::Upper)?;
    let lo = info_bound(&f_cgf, d, Side::Lower)?;
    let (k_minus, k_plus) = event_interval;
    let upper = if k_minus > 0.0 { up.value / k_minus } else { f64::INFINITY };
    let lower = if k_plus > 0.0 { lo.value.max(0.0) / k_plus } else { 0.0 };
    Ok(VasicekBound {
        lower,
        upper,
        baseline: m.baseline_value(),
        entropy,
        event_prob,
        event_interval,
        payoff: (lo, up),
    })
}

/// Vasicek bounds swept over `σ̃` or over the asset volatility `σ`.
pub fn vasicek_bounds(base: &VasicekParams, sweep: VasicekSweep, grid: &[f64]) -> Result<CurveTable> {
    grid_rows(grid, |x| {
        let mut p = *base;
        match sweep {
            VasicekSweep::SigmaTilde => p.sigma_tilde = x,
            VasicekSweep::Sigma => p.market.sigma = x,
        }
        let b = vasicek_point(&p)?;
        let status = if b.upper.is_finite() {
            RowStatus::from_bounds([b.entropy.status, b.payoff.0.status, b.payoff.1.status])
        } else {
            RowStatus::Infinite
        };
        Ok(CurveRow {
            sweep: Some(x),
            baseline: b.baseline,
            lower: b.lower,
            upper: b.upper,
            ref_lower: None,
            ref_upper: None,
            status,
        })
    })
}

/// Option market whose rate drops from `r + dr_plus` to `r` at an unknown
/// time before `t_f`: `0 ≤ Δr(t) ≤ dr_plus·1_{[0,t_f]}(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDrop {
    pub market: OptionMarket,
    pub dr_plus: f64,
}

/// Bound on one side for the rate drop with the baseline rate set to `kappa`.
pub fn rate_drop_side(p: &RateDrop, t_f: f64, kappa: f64, side: Side) -> Result<BoundResult> {
    let m = p.market;
    check_nonnegative("dr_plus", p.dr_plus)?;
    check_nonnegative("t_f", t_f)?;
    if !(m.r > 0.0) {
        return config_err(format!("the rate must stay positive, got r = {}", m.r));
    }
    let law = m.exercise_law(kappa)?;
    let (r, dr) = (m.r, p.dr_plus);
    // envelope of the drift change relative to the baseline rate κ
    let inside = (r - kappa + dr).max(kappa - r);
    let outside = (r - kappa).abs();
    let weight = 0.5 / (m.sigma * m.sigma);
    let penalty = move |t: &f64| {
        let before = t.min(t_f);
        let after = (t - t_f).max(0.0);
        let tail = if after > 0.0 { outside * outside * after } else { 0.0 };
        weight * (inside * inside * before + tail)
    };
    let scale = m.strike - m.level;
    let extra = match side {
        Side::Upper => 0.0,
        Side::Lower => dr,
    };
    let payoff = move |t: &f64| {
        if t.is_finite() {
            scale * (-r * t - extra * t.min(t_f)).exp()
        } else {
            0.0
        }
    };
    let tilted = TiltedExpectation::new(HittingTimeLaw::new(law).with_breakpoints([t_f]), payoff, penalty);
    Ok(tilted_bound(&tilted, side)?)
}

/// `(lower, upper)` for one `t_f`; with `kappa_optimize` each side is also
/// minimized over baseline rates `κ ∈ [0.2r, 2r]`, never doing worse than
/// `κ = r`.
pub fn rate_drop_point(p: &RateDrop, t_f: f64, kappa_optimize: bool) -> Result<(BoundResult, BoundResult)> {
    let plain = |side| rate_drop_side(p, t_f, p.market.r, side);
    if !kappa_optimize {
        return Ok((plain(Side::Lower)?, plain(Side::Upper)?));
    }
    let r = p.market.r;
    let best = |side: Side| -> Result<BoundResult> {
        let base = plain(side)?;
        let score = |kappa: f64| match rate_drop_side(p, t_f, kappa, side) {
            Ok(b) if b.value.is_finite() => side.sign() * b.value,
            _ => f64::INFINITY,
        };
        let found = match minimize_scalar(&ScalarObjective::new(score, 0.2 * r, 2.0 * r), 1e-5) {
            Ok(m) if m.f.is_finite() => Some(m),
            Ok(_) | Err(NumericsError::EmptyDomain) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(match found {
            Some(m) if m.f < side.sign() * base.value => rate_drop_side(p, t_f, m.x, side)?,
            _ => base,
        })
    };
    Ok((best(Side::Lower)?, best(Side::Upper)?))
}

/// Rate-drop bounds over a grid of `t_f`; references are the comparison
/// values at rates `r + dr_plus` and `r`.
pub fn rate_drop_bounds(p: &RateDrop, t_f_grid: &[f64], kappa_optimize: bool) -> Result<CurveTable> {
    let m = p.market;
    m.validate()?;
    let (ref_lo, ref_up) = (m.value_at_rate(m.r + p.dr_plus), m.baseline_value());
    grid_rows(t_f_grid, |t_f| {
        let (lo, up) = rate_drop_point(p, t_f, kappa_optimize)?;
        Ok(CurveRow {
            sweep: Some(t_f),
            baseline: m.baseline_value(),
            // the two sides meet at zero budget up to rounding
            lower: lo.value.min(up.value),
            upper: up.value,
            ref_lower: Some(ref_lo),
            ref_upper: Some(ref_up),
            status: RowStatus::from_bounds([lo.status, up.status]),
        })
    })
}

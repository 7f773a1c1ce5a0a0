//! Linear-quadratic control under drift perturbations.
//!
//! The optimal feedback for the discounted linear problem is computed from an
//! algebraic Riccati equation; the closed-loop state is Gaussian, which makes
//! the per-time CGF of the quadratic running cost explicit.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::bounds::{
    discounted_bound, BoundError, CgfHandle, DiscountMeasure, DiscountMode, DiscountedBound, DiscountedFamily, Side,
};
use crate::cgf::{CgfError, GaussianQuadraticForm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LqError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no stabilizing feedback could be constructed")]
    NotStabilizable,
    #[error("Riccati iteration did not converge in {0} steps")]
    NoConvergence(usize),
    #[error("Lyapunov equation is singular")]
    SingularLyapunov,
    #[error(transparent)]
    Cgf(#[from] CgfError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

pub type Result<T> = std::result::Result<T, LqError>;

/// `dX = (BX + Du)dt + σdW`, `X₀ ~ N(0, Σ₀)`, with discounted cost
/// `E ∫ ½(XᵀQX + uᵀRu) λe^{−λs} ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqProblem {
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lam: f64,
    pub sigma0: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

impl LqProblem {
    pub fn new(
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        lam: f64,
        sigma0: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let n = b.nrows();
        let m = d.ncols();
        let bad = |msg: &str| Err(LqError::InvalidProblem(msg.to_string()));
        if !b.is_square() || d.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
            return bad("matrix dimensions are inconsistent");
        }
        if sigma0.shape() != (n, n) || sigma.nrows() != n {
            return bad("covariance and noise matrices must have n rows");
        }
        if !(lam > 0.0 && lam.is_finite()) {
            return bad("discount rate must be positive");
        }
        if !symmetric(&q) || nalgebra::SymmetricEigen::new(q.clone()).eigenvalues.min() < -1e-12 {
            return bad("state cost must be symmetric positive semidefinite");
        }
        if !symmetric(&r) || nalgebra::Cholesky::new(r.clone()).is_none() {
            return bad("control cost must be symmetric positive definite");
        }
        if !symmetric(&sigma0) || nalgebra::SymmetricEigen::new(sigma0.clone()).eigenvalues.min() < -1e-12 {
            return bad("initial covariance must be symmetric positive semidefinite");
        }
        Ok(Self { b, d, q, r, lam, sigma0, sigma })
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// `B − (λ/2)I`.
    pub fn discounted_drift(&self) -> DMatrix<f64> {
        &self.b - DMatrix::identity(self.dim(), self.dim()) * (0.5 * self.lam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub y: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Closed-loop drift `B + DK`.
    pub a_cl: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
    pub iterations: usize,
}

impl RiccatiSolution {
    /// Running-cost matrix `Q + KᵀRK` of the closed loop.
    pub fn cost_matrix(&self, prob: &LqProblem) -> DMatrix<f64> {
        let c = &prob.q + self.gain.transpose() * &prob.r * &self.gain;
        (&c + c.transpose()) * 0.5
    }
}

fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `AX + XAᵀ + W = 0`.
pub fn solve_lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(AX) = (I⊗A)vec X, vec(XAᵀ) = (A⊗I)vec X
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_column_slice((-w).as_slice());
    let sol = op.lu().solve(&rhs).ok_or(LqError::SingularLyapunov)?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

fn riccati_residual(prob: &LqProblem, bl: &DMatrix<f64>, y: &DMatrix<f64>, r_inv: &DMatrix<f64>) -> DMatrix<f64> {
    bl.transpose() * y + y * bl + &prob.q - y * &prob.d * r_inv * prob.d.transpose() * y
}

/// Feedback `K₀` with `B_λ + DK₀` Hurwitz.
fn stabilizing_gain(prob: &LqProblem, bl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = (prob.dim(), prob.d.ncols());
    if max_real_eigenvalue(bl) < 0.0 {
        return Ok(DMatrix::zeros(m, n));
    }
    // Bass: with β beyond the spectrum of −B_λ, (B_λ + βI)Z + Z(B_λ + βI)ᵀ = 2DDᵀ
    // yields K = −DᵀZ⁻¹ and a Lyapunov certificate for B_λ − DDᵀZ⁻¹.
    let beta = bl.norm() + 1.0;
    let shifted = -(bl + DMatrix::identity(n, n) * beta);
    let z = solve_lyapunov(&shifted, &(&prob.d * prob.d.transpose() * 2.0))?;
    let z_inv = nalgebra::Cholesky::new(z).ok_or(LqError::NotStabilizable)?.inverse();
    let gain = -(prob.d.transpose() * z_inv);
    if max_real_eigenvalue(&(bl + &prob.d * &gain)) < 0.0 {
        Ok(gain)
    } else {
        Err(LqError::NotStabilizable)
    }
}

const RICCATI_MAX_ITER: usize = 100;

/// Stabilizing solution of `B_λᵀY + YB_λ + Q − YDR⁻¹DᵀY = 0` by
/// Newton–Kleinman iteration, with gain `K = −R⁻¹DᵀY`.
pub fn solve_riccati(prob: &LqProblem) -> Result<RiccatiSolution> {
    let bl = prob.discounted_drift();
    let r_inv = nalgebra::Cholesky::new(prob.r.clone())
        .ok_or_else(|| LqError::InvalidProblem("control cost must be positive definite".into()))?
        .inverse();
    let mut gain = stabilizing_gain(prob, &bl)?;
    let mut y = DMatrix::zeros(prob.dim(), prob.dim());
    for it in 1..=RICCATI_MAX_ITER {
        let closed = &bl + &prob.d * &gain;
        let w = &prob.q + gain.transpose() * &prob.r * &gain;
        let next = solve_lyapunov(&closed.transpose(), &w)?;
        let next_gain = -(&r_inv * prob.d.transpose() * &next);
        let step = (&next - &y).norm();
        y = next;
        gain = next_gain;
        if step <= 1e-14 * y.norm().max(1.0) {
            let residual = riccati_residual(prob, &bl, &y, &r_inv).norm();
            let a_cl = &prob.b + &prob.d * &gain;
            return Ok(RiccatiSolution { y, gain, a_cl, residual, iterations: it });
        }
    }
    Err(LqError::NoConvergence(RICCATI_MAX_ITER))
}

fn covariance_rhs(a: &DMatrix<f64>, noise: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    a * s + s * a.transpose() + noise
}

fn rk4_step(a: &DMatrix<f64>, noise: &DMatrix<f64>, s: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = covariance_rhs(a, noise, s);
    let k2 = covariance_rhs(a, noise, &(s + &k1 * (0.5 * h)));
    let k3 = covariance_rhs(a, noise, &(s + &k2 * (0.5 * h)));
    let k4 = covariance_rhs(a, noise, &(s + &k3 * h));
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

const COV_TOL: f64 = 1e-12;

/// `Σ_t` at each of the increasing `times`, from `Σ' = AΣ + ΣAᵀ + σσᵀ`,
/// `Σ(0) = Σ₀`, by RK4 with step-doubling error control.
pub fn covariance_path(prob: &LqProblem, a_cl: &DMatrix<f64>, times: &[f64]) -> Vec<DMatrix<f64>> {
    let noise = &prob.sigma * prob.sigma.transpose();
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut s = prob.sigma0.clone();
    let mut h = 0.1 / (a_cl.norm() + 1.0);
    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let full = rk4_step(a_cl, &noise, &s, step);
            let half = rk4_step(a_cl, &noise, &rk4_step(a_cl, &noise, &s, 0.5 * step), 0.5 * step);
            let err = (&full - &half).amax() / 15.0;
            let scale = half.amax().max(noise.amax() * step).max(f64::MIN_POSITIVE);
            if err <= COV_TOL * scale || step < 1e-12 {
                t += step;
                s = &half + (&half - &full) / 15.0;
                s = (&s + s.transpose()) * 0.5;
                if err < 0.1 * COV_TOL * scale {
                    h = (2.0 * step).max(h);
                }
            } else {
                h = 0.5 * step;
            }
        }
        out.push(s.clone());
    }
    out
}

/// `Σ_t` for the closed loop with drift `a_cl`.
pub fn covariance_at(prob: &LqProblem, a_cl: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    covariance_path(prob, a_cl, &[t.max(0.0)]).pop().unwrap_or_else(|| prob.sigma0.clone())
}

/// Exact baseline `∫ ½tr(Σ_sC) λe^{−λs} ds`. The discounted covariance solves
/// `(A − λ/2)S + S(A − λ/2)ᵀ + σσᵀ + λΣ₀ = 0`.
pub fn discounted_baseline_cost(prob: &LqProblem, sol: &RiccatiSolution) -> Result<f64> {
    let n = prob.dim();
    let shifted = &sol.a_cl - DMatrix::identity(n, n) * (0.5 * prob.lam);
    let w = &prob.sigma * prob.sigma.transpose() + &prob.sigma0 * prob.lam;
    let s = solve_lyapunov(&shifted, &w)?;
    Ok(0.5 * (s * sol.cost_matrix(prob)).trace())
}

/// Per-time Gaussian quadratic CGFs of the closed-loop running cost with the
/// Girsanov budget `α²s/2`.
struct ControlFamily {
    cost: DMatrix<f64>,
    alpha: f64,
    growth: f64,
    covariances: HashMap<u64, DMatrix<f64>>,
    prob: LqProblem,
    a_cl: DMatrix<f64>,
}

impl DiscountedFamily for ControlFamily {
    fn cgf(&self, s: f64) -> crate::bounds::Result<CgfHandle> {
        let sigma = match self.covariances.get(&s.to_bits()) {
            Some(m) => m.clone(),
            None => covariance_at(&self.prob, &self.a_cl, s),
        };
        let n = sigma.nrows();
        let form = GaussianQuadraticForm::new(sigma, self.cost.clone(), DVector::zeros(n))
            .map_err(|e| BoundError::InvalidInput(e.to_string()))?;
        Ok(form.cgf_handle())
    }

    fn eta(&self, s: f64) -> f64 {
        0.5 * self.alpha * self.alpha * s
    }

    fn growth_rate(&self) -> f64 {
        self.growth
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCostBound {
    pub lower: DiscountedBound,
    pub upper: DiscountedBound,
    pub baseline: f64,
}

/// Interval for the discounted closed-loop cost under every drift
/// perturbation `σβ` with `‖β‖_∞ ≤ alpha`.
pub fn control_cost_bound(prob: &LqProblem, alpha: f64) -> Result<ControlCostBound> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(LqError::InvalidProblem(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    let sol = solve_riccati(prob)?;
    let growth = (2.0 * max_real_eigenvalue(&sol.a_cl)).max(0.0);
    let weight = DiscountMeasure::Exponential { rate: prob.lam };
    let nodes: Vec<f64> = weight.rule(growth)?.into_iter().map(|(s, _)| s).collect();
    let path = covariance_path(prob, &sol.a_cl, &nodes);
    let family = ControlFamily {
        cost: sol.cost_matrix(prob),
        alpha,
        growth,
        covariances: nodes.iter().map(|s| s.to_bits()).zip(path).collect(),
        prob: prob.clone(),
        a_cl: sol.a_cl.clone(),
    };
    let lower = discounted_bound(&family, &weight, Side::Lower, DiscountMode::Inside)?;
    let upper = discounted_bound(&family, &weight, Side::Upper, DiscountMode::Inside)?;
    Ok(ControlCostBound { lower, upper, baseline: discounted_baseline_cost(prob, &sol)? })
}

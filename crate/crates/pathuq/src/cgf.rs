//! Closed-form baseline laws and their cumulant generating functions.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bounds::{CgfHandle, Side};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CgfError {
    #[error("level a = {a} and drift mu = {mu} must have the same sign")]
    SignMismatch { a: f64, mu: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not symmetric positive-(semi)definite: {0}")]
    NotSpd(&'static str),
    #[error("lambda = {lam} is at or beyond the branch point {limit}")]
    BeyondBranch { lam: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, CgfError>;

/// `log Φ(-z)` for the standard normal cdf, accurate far into the tail.
pub fn log_normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        (-0.5 * libm::erfc(-z / SQRT_2)).ln_1p()
    } else if z < 30.0 {
        (0.5 * libm::erfc(z / SQRT_2)).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Standard normal cdf.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Law of `τ = inf{t : μt + W_t = a}` for a standard Brownian motion `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftedBmHittingLaw {
    pub a: f64,
    pub mu: f64,
}

impl DriftedBmHittingLaw {
    pub fn new(a: f64, mu: f64) -> Result<Self> {
        if !(a.is_finite() && a != 0.0 && mu.is_finite()) {
            return Err(CgfError::InvalidParameter(format!("need finite a != 0 and finite mu, got a={a}, mu={mu}")));
        }
        Ok(Self { a, mu })
    }

    /// Drift measured toward the level.
    fn drift_toward(&self) -> f64 {
        self.mu * self.a.signum()
    }

    pub fn same_sign(&self) -> bool {
        self.drift_toward() > 0.0
    }

    pub fn log_density(&self, t: f64) -> f64 {
        if !(t > 0.0) || t.is_infinite() {
            return f64::NEG_INFINITY;
        }
        let d = self.a - self.mu * t;
        self.a.abs().ln() - 0.5 * (2.0 * PI).ln() - 1.5 * t.ln() - d * d / (2.0 * t)
    }

    pub fn density(&self, t: f64) -> f64 {
        self.log_density(t).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        if t.is_infinite() {
            return 1.0 - self.atom();
        }
        let big_a = self.a.abs();
        let m = self.drift_toward();
        let rt = t.sqrt();
        let first = normal_cdf((m * t - big_a) / rt);
        let second = (2.0 * big_a * m + log_normal_sf((big_a + m * t) / rt)).exp();
        (first + second).min(1.0 - self.atom())
    }

    /// Probability that the level is never reached.
    pub fn atom(&self) -> f64 {
        let x = self.mu * self.a;
        -(x - x.abs()).exp_m1()
    }

    /// Mode of the density; the natural time scale of the law.
    pub fn time_scale(&self) -> f64 {
        let a2 = self.a * self.a;
        2.0 * a2 / (3.0 + (9.0 + 4.0 * self.mu * self.mu * a2).sqrt())
    }

    /// Supremum of `s` with `E[e^{sτ}; τ < ∞] < ∞`.
    pub fn exponential_moment_limit(&self) -> f64 {
        0.5 * self.mu * self.mu
    }

    /// `E[e^{−λτ}; τ < ∞] = exp(aμ − |a|√(μ² + 2λ))` for `λ ≥ 0`.
    pub fn laplace(&self, lam: f64) -> f64 {
        (self.a * self.mu - self.a.abs() * (self.mu * self.mu + 2.0 * lam).sqrt()).exp()
    }

    /// `E[τ]`, finite when level and drift share a sign.
    pub fn mean(&self) -> Result<f64> {
        self.require_same_sign()?;
        Ok(self.a / self.mu)
    }

    fn require_same_sign(&self) -> Result<()> {
        if self.same_sign() {
            Ok(())
        } else {
            Err(CgfError::SignMismatch { a: self.a, mu: self.mu })
        }
    }

    /// `Λ(c) = aμ − |a|√(μ² − 2c)` for `c < μ²/2`, `+inf` otherwise.
    pub fn cgf(&self, c: f64) -> Result<f64> {
        self.require_same_sign()?;
        Ok(hitting_cgf_unchecked(self.a, self.mu, c))
    }

    /// Uncentered CGF of `τ` as a handle.
    pub fn cgf_handle(&self) -> Result<CgfHandle> {
        self.require_same_sign()?;
        let (a, mu) = (self.a, self.mu);
        Ok(CgfHandle::new(move |c| hitting_cgf_unchecked(a, mu, c), 0.5 * mu * mu, false))
    }
}

fn hitting_cgf_unchecked(a: f64, mu: f64, c: f64) -> f64 {
    let disc = mu * mu - 2.0 * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    // rationalized form of |a|(|μ| − √(μ² − 2c))
    a.abs() * 2.0 * c / (mu.abs() + disc.sqrt())
}

/// `(density, cdf, atom)` of the hitting law at `t`.
pub fn hitting_density_cdf(law: &DriftedBmHittingLaw, t: f64) -> (f64, f64, f64) {
    (law.density(t), law.cdf(t), law.atom())
}

/// Uncentered hitting-time CGF; mixed signs are rejected.
pub fn hitting_cgf(law: &DriftedBmHittingLaw, c: f64) -> Result<f64> {
    law.cgf(c)
}

/// Quadratic functional `½ zᵀCz + dᵀz` of `z ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianQuadraticForm {
    pub sigma: DMatrix<f64>,
    pub cost: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Eigenvalues and eigenvectors of `MΣMᵀ` with `C = MᵀM`.
    eig_values: DVector<f64>,
    eig_vectors: DMatrix<f64>,
    /// Coordinates of `MΣd` in the eigenbasis.
    msd: DVector<f64>,
    dsd: f64,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

impl GaussianQuadraticForm {
    /// `Σ` may be singular (for instance a zero initial covariance).
    pub fn new(sigma: DMatrix<f64>, cost: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if !is_symmetric(&sigma) || cost.nrows() != n || d.len() != n {
            return Err(CgfError::NotSpd("covariance must be symmetric with matching dimensions"));
        }
        if !is_symmetric(&cost) {
            return Err(CgfError::NotSpd("cost matrix must be symmetric"));
        }
        let sym_sigma = (&sigma + sigma.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym_sigma.clone()).eigenvalues.min();
        if min_eig < -1e-10 * sym_sigma.amax().max(1.0) {
            return Err(CgfError::NotSpd("covariance has a negative eigenvalue"));
        }
        let chol = nalgebra::Cholesky::new((&cost + cost.transpose()) * 0.5).ok_or(CgfError::NotSpd("cost"))?;
        let m = chol.l().transpose();
        let s = &m * &sym_sigma * m.transpose();
        let eig = SymmetricEigen::new((&s + s.transpose()) * 0.5);
        let msd = eig.eigenvectors.transpose() * (&m * &sym_sigma * &d);
        let dsd = d.dot(&(&sym_sigma * &d));
        Ok(Self {
            sigma: sym_sigma,
            cost,
            d,
            eig_values: eig.eigenvalues.map(|v| v.max(0.0)),
            eig_vectors: eig.eigenvectors,
            msd,
            dsd,
        })
    }

    /// Largest admissible tilt `1/‖MΣMᵀ‖` on the upper side.
    pub fn c_max(&self) -> f64 {
        let top = self.eig_values.max();
        if top > 0.0 {
            1.0 / top
        } else {
            f64::INFINITY
        }
    }

    /// `log E[exp(c(½zᵀCz + dᵀz))]` for signed `c`.
    pub fn cgf(&self, c: f64) -> f64 {
        if c * self.eig_values.max() >= 1.0 {
            return f64::INFINITY;
        }
        let mut log_det = 0.0;
        let mut quad = self.dsd;
        for (lam, proj) in self.eig_values.iter().zip(self.msd.iter()) {
            log_det += (-c * lam).ln_1p();
            quad += c * proj * proj / (1.0 - c * lam);
        }
        -0.5 * log_det + 0.5 * c * c * quad
    }

    pub fn mean(&self) -> f64 {
        0.5 * (&self.sigma * &self.cost).trace()
    }

    pub fn cgf_handle(&self) -> CgfHandle {
        let form = self.clone();
        let c_max = self.c_max();
        CgfHandle::new(move |c| form.cgf(c), c_max, false)
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eig_vectors
    }
}

/// `Λ(±c)` of a Gaussian quadratic form.
pub fn gaussian_quadratic_cgf(form: &GaussianQuadraticForm, c: f64, side: Side) -> f64 {
    form.cgf(side.sign() * c)
}

/// Squared integral of an OU rate perturbation `dΔr = −γΔr dt + σ̃ dW`,
/// scaled by the asset volatility `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuSquaredIntegral {
    pub gamma: f64,
    pub sigma_tilde: f64,
    pub sigma: f64,
}

impl OuSquaredIntegral {
    pub fn new(gamma: f64, sigma_tilde: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0 && sigma_tilde > 0.0 && sigma > 0.0) {
            return Err(CgfError::InvalidParameter(format!(
                "gamma, sigma_tilde, sigma must be positive: {gamma}, {sigma_tilde}, {sigma}"
            )));
        }
        Ok(Self { gamma, sigma_tilde, sigma })
    }

    /// `σ²γ²/σ̃²`, where the real branch of the moment generating function ends.
    pub fn branch_point(&self) -> f64 {
        (self.sigma * self.gamma / self.sigma_tilde).powi(2)
    }

    /// Long-time growth rate of `log E[exp(λσ⁻²/2 ∫₀ᵗ Δr² ds)]`.
    pub fn growth_rate(&self, lam: f64) -> f64 {
        let w = 1.0 - lam / self.branch_point();
        0.5 * self.gamma * (1.0 - w.max(0.0).sqrt())
    }

    /// `log E[exp(λσ⁻²/2 ∫₀ᵗ Δr² ds)]` with `Δr₀ = 0`.
    pub fn log_mgf(&self, t: f64, lam: f64) -> Result<f64> {
        let limit = self.branch_point();
        if lam >= limit {
            return Err(CgfError::BeyondBranch { lam, limit });
        }
        if t <= 0.0 || lam == 0.0 {
            return Ok(0.0);
        }
        let w = 1.0 - lam / limit;
        let gt = self.gamma * t;
        let sw = w.sqrt();
        let x = gt * sw;
        // log(sinh(x)/√w + cosh(x)), guarded for large x and small w
        let log_bracket = if x > 20.0 {
            x + (0.5 * (1.0 + 1.0 / sw) + 0.5 * (1.0 - 1.0 / sw) * (-2.0 * x).exp()).ln()
        } else {
            let sinh_over = if x < 1e-4 { gt * (1.0 + x * x / 6.0) } else { x.sinh() / sw };
            (sinh_over + x.cosh()).ln()
        };
        Ok(0.5 * gt - 0.5 * log_bracket)
    }

    /// `e^{γt/2}[sinh(γt√w)/√w + cosh(γt√w)]^{−1/2}`, `w = 1 − λσ̃²/(σ²γ²)`.
    pub fn mgf(&self, t: f64, lam: f64) -> Result<f64> {
        self.log_mgf(t, lam).map(f64::exp)
    }

    /// Variance of `∫₀ᵗ Δr ds`.
    pub fn integrated_variance(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let g = self.gamma;
        let x = g * t;
        let bracket = if x < 1.0 {
            // Σ_{k≥3} (−1)^k (4 − 2^k) x^k / k!
            let mut term = x * x / 2.0;
            let mut sum = 0.0;
            for k in 3..40 {
                term *= x / k as f64;
                let coeff = (4.0 - 2f64.powi(k)) * if k % 2 == 0 { 1.0 } else { -1.0 };
                sum += coeff * term;
                if (coeff * term).abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            sum
        } else {
            2.0 * x + 4.0 * (-x).exp_m1() - (-2.0 * x).exp_m1()
        };
        self.sigma_tilde.powi(2) * bracket / (2.0 * g.powi(3))
    }
}

/// `E[exp(λσ⁻²/2 ∫₀ᵗ Δr² ds)]`.
pub fn ou_squared_mgf(params: &OuSquaredIntegral, t: f64, lam: f64) -> Result<f64> {
    params.mgf(t, lam)
}

/// Variance of the integrated OU perturbation.
pub fn integrated_ou_variance(params: &OuSquaredIntegral, t: f64) -> f64 {
    params.integrated_variance(t)
}

/// Long-time scaled CGF of the time-averaged M/M/∞ queue length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueCgfLimit {
    pub alpha: f64,
    pub rho: f64,
}

impl QueueCgfLimit {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        if !(alpha > 0.0 && rho > 0.0) {
            return Err(CgfError::InvalidParameter(format!("alpha and rho must be positive: {alpha}, {rho}")));
        }
        Ok(Self { alpha, rho })
    }

    /// `αc²/(ρ²(1 − c/ρ))` for `c < ρ`.
    pub fn cgf(&self, c: f64) -> f64 {
        if c >= self.rho {
            f64::INFINITY
        } else {
            self.alpha * c * c / (self.rho * self.rho * (1.0 - c / self.rho))
        }
    }

    pub fn cgf_handle(&self) -> CgfHandle {
        let q = *self;
        CgfHandle::new(move |c| q.cgf(c), self.rho, true)
    }
}

pub fn queue_cgf_limit(params: &QueueCgfLimit, c: f64) -> f64 {
    params.cgf(c)
}

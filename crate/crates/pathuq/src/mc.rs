//! Monte Carlo simulators for alternative models: Euler–Maruyama paths with
//! per-path observers, phase-type sampling, and an event-driven queue.
//!
//! Path `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so results do
//! not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::relent::PhaseType;

/// Random source handed to samplers.
pub type PathRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, McError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(McError::InvalidConfig("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(McError::InvalidConfig(format!("t_max must be positive, got {}", self.t_max)));
        }
        Ok(())
    }

    /// Generator for path `index`.
    pub fn path_rng(&self, index: usize) -> PathRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: usize,
    /// Fraction of paths stopped by the horizon cap.
    pub capped_fraction: f64,
}

/// Order-fixed pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

impl McEstimate {
    /// Sample mean and standard error.
    pub fn from_samples(samples: &[f64], capped_fraction: f64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n_effective: 0, capped_fraction };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self { mean, stderr: (var / n as f64).sqrt(), n_effective: n, capped_fraction }
    }

    /// Ratio of means with a delta-method standard error.
    pub fn ratio(num: &[f64], den: &[f64], capped_fraction: f64) -> Self {
        let n = num.len().min(den.len());
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n_effective: 0, capped_fraction };
        }
        let (mn, md) = (pairwise_sum(&num[..n]) / n as f64, pairwise_sum(&den[..n]) / n as f64);
        let ratio = mn / md;
        let resid: Vec<f64> = (0..n).map(|i| (num[i] - ratio * den[i]).powi(2)).collect();
        let var = if n > 1 { pairwise_sum(&resid) / (n - 1) as f64 } else { 0.0 };
        Self { mean: ratio, stderr: (var / n as f64).sqrt() / md.abs(), n_effective: n, capped_fraction }
    }
}

/// Per-path functional evaluated along an Euler–Maruyama path.
pub trait PathObserver {
    /// Called at `t = 0` and after every step; returning `false` stops the path.
    fn observe(&mut self, t: f64, x: &[f64]) -> bool;
    /// Functional values; `capped` is set when the path reached `t_max`.
    fn finish(&self, capped: bool) -> Vec<f64>;
}

/// First time component `index` crosses `level`, followed by the state at
/// that time; capped paths report `t_max` and the final state.
#[derive(Debug, Clone)]
pub struct HittingTime {
    index: usize,
    level: f64,
    side: Option<bool>,
    last_t: f64,
    last_x: Vec<f64>,
    hit: Option<f64>,
}

impl HittingTime {
    pub fn new(index: usize, level: f64) -> Self {
        Self { index, level, side: None, last_t: 0.0, last_x: Vec::new(), hit: None }
    }
}

impl PathObserver for HittingTime {
    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        self.last_t = t;
        self.last_x.clear();
        self.last_x.extend_from_slice(x);
        let above = x[self.index] >= self.level;
        match self.side {
            None if x[self.index] == self.level => {
                self.hit = Some(t);
                false
            }
            None => {
                self.side = Some(above);
                true
            }
            Some(s) if s != above || x[self.index] == self.level => {
                self.hit = Some(t);
                false
            }
            Some(_) => true,
        }
    }

    fn finish(&self, _capped: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.last_x.len());
        out.push(self.hit.unwrap_or(self.last_t));
        out.extend_from_slice(&self.last_x);
        out
    }
}

/// `∫₀^{t_max} g(t, x_t) dt` by the left-point rule.
pub struct PathIntegral<G> {
    g: G,
    last: Option<(f64, f64)>,
    total: f64,
}

impl<G: Fn(f64, &[f64]) -> f64> PathIntegral<G> {
    pub fn new(g: G) -> Self {
        Self { g, last: None, total: 0.0 }
    }
}

impl<G: Fn(f64, &[f64]) -> f64> PathObserver for PathIntegral<G> {
    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        if let Some((t0, g0)) = self.last {
            self.total += g0 * (t - t0);
        }
        self.last = Some((t, (self.g)(t, x)));
        true
    }

    fn finish(&self, _capped: bool) -> Vec<f64> {
        vec![self.total]
    }
}

/// Functional values per path, one column per observer output.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSamples {
    pub values: Vec<Vec<f64>>,
    pub capped: Vec<bool>,
}

impl PathSamples {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }

    pub fn capped_fraction(&self) -> f64 {
        if self.capped.is_empty() {
            return 0.0;
        }
        self.capped.iter().filter(|c| **c).count() as f64 / self.capped.len() as f64
    }

    pub fn estimate(&self, k: usize) -> McEstimate {
        McEstimate::from_samples(&self.column(k), self.capped_fraction())
    }

    /// Estimate of `E[column num] / E[column den]`.
    pub fn ratio_estimate(&self, num: usize, den: usize) -> McEstimate {
        McEstimate::ratio(&self.column(num), &self.column(den), self.capped_fraction())
    }
}

/// Euler–Maruyama simulation of `dX = b(t, X)dt + σ(t, X)dW` with square
/// row-major `σ`. Hitting times are detected at grid crossings, without a
/// Brownian-bridge correction, so they carry an O(√dt) upward bias.
pub fn simulate_sde<B, S, O, F>(drift: B, diffusion: S, x0: &[f64], cfg: &SimConfig, observer: F) -> Result<PathSamples>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
    O: PathObserver,
    F: Fn() -> O + Sync,
{
    cfg.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(McError::InvalidConfig("state dimension must be positive".into()));
    }
    let steps = (cfg.t_max / cfg.dt).ceil() as usize;
    let run = |index: usize| -> (Vec<f64>, bool) {
        let mut rng = cfg.path_rng(index);
        let mut obs = observer();
        let mut x = x0.to_vec();
        let (mut b, mut s, mut dw) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; n]);
        let sqrt_dt = cfg.dt.sqrt();
        if !obs.observe(0.0, &x) {
            return (obs.finish(false), false);
        }
        for k in 0..steps {
            let t = k as f64 * cfg.dt;
            let h = cfg.dt.min(cfg.t_max - t);
            drift(t, &x, &mut b);
            diffusion(t, &x, &mut s);
            let scale = if h == cfg.dt { sqrt_dt } else { h.sqrt() };
            for w in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = z * scale;
            }
            for i in 0..n {
                let noise: f64 = (0..n).map(|j| s[i * n + j] * dw[j]).sum();
                x[i] += b[i] * h + noise;
            }
            if !obs.observe(t + h, &x) {
                return (obs.finish(false), false);
            }
        }
        (obs.finish(true), true)
    };
    let (values, capped) = (0..cfg.n_paths).into_par_iter().map(run).unzip();
    Ok(PathSamples { values, capped })
}

fn categorical(weights: impl Iterator<Item = f64>, total: f64, rng: &mut PathRng) -> Option<usize> {
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = Some(i);
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    last
}

/// One absorption time of the chain behind `pt`.
pub fn sample_phase_type_one(pt: &PhaseType, rng: &mut PathRng) -> f64 {
    let k = pt.nu.len();
    let exit = pt.exit_rates();
    let Some(mut state) = categorical(pt.nu.iter().copied(), pt.nu.sum(), rng) else {
        return 0.0;
    };
    let mut t = 0.0;
    loop {
        let rate = -pt.t[(state, state)];
        t += Exp::new(rate).expect("positive rate").sample(rng);
        let weights = (0..=k).map(|j| match j {
            j if j == k => exit[state],
            j if j == state => 0.0,
            j => pt.t[(state, j)],
        });
        match categorical(weights, rate, rng) {
            Some(j) if j < k => state = j,
            _ => return t,
        }
    }
}

/// `cfg.n_paths` absorption times; `dt` and `t_max` are unused.
pub fn sample_phase_type(pt: &PhaseType, cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok((0..cfg.n_paths).into_par_iter().map(|i| sample_phase_type_one(pt, &mut cfg.path_rng(i))).collect())
}

/// Time-averaged queue length over `[0, t_max]` for a semi-Markov queue with
/// jump chain `x → x+1` w.p. `α/(α+ρx)`, `x → x−1` otherwise, waiting time
/// `waiting(x, rng)` in state `x`, and a Poisson(`α/ρ`) initial state.
pub fn simulate_queue<W>(alpha: f64, rho: f64, waiting: W, cfg: &SimConfig) -> Result<McEstimate>
where
    W: Fn(usize, &mut PathRng) -> f64 + Sync,
{
    cfg.validate()?;
    if !(alpha >= 0.0 && rho > 0.0 && alpha.is_finite() && rho.is_finite()) {
        return Err(McError::InvalidConfig(format!("need alpha >= 0 and rho > 0, got {alpha}, {rho}")));
    }
    let run = |index: usize| -> f64 {
        let mut rng = cfg.path_rng(index);
        let mut x =
            if alpha > 0.0 { Poisson::new(alpha / rho).expect("positive mean").sample(&mut rng) as usize } else { 0 };
        let (mut t, mut area) = (0.0, 0.0);
        while t < cfg.t_max {
            let rate = alpha + rho * x as f64;
            if rate == 0.0 {
                break;
            }
            let w = waiting(x, &mut rng).min(cfg.t_max - t);
            area += x as f64 * w;
            t += w;
            if rng.random::<f64>() * rate < alpha {
                x += 1;
            } else {
                x -= 1;
            }
        }
        area / cfg.t_max
    };
    let samples: Vec<f64> = (0..cfg.n_paths).into_par_iter().map(run).collect();
    Ok(McEstimate::from_samples(&samples, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The estimate lies inside the interval.
    Pass,
    /// The estimate lies outside, but its 3σ band meets the interval.
    PassBoundary,
    Fail,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::PassBoundary => "PASS-boundary",
            Verdict::Fail => "FAIL",
        }
    }

    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub interval: (f64, f64),
    pub estimate: McEstimate,
    /// Widening applied to both ends of the interval for known
    /// discretization bias.
    pub allowance: f64,
    /// Signed distance from the estimate to the nearest interval end, in
    /// standard errors; negative below the interval, zero inside.
    pub excess_sigmas: f64,
}

impl ValidationReport {
    /// Where the estimate sits relative to the interval.
    pub fn direction(&self) -> &'static str {
        if self.excess_sigmas < 0.0 {
            "below"
        } else if self.excess_sigmas > 0.0 {
            "above"
        } else {
            "inside"
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} interval [{}, {}] allowance {} estimate {} ± {} ({}, {:.2}σ) capped fraction {}",
            self.verdict.label(),
            self.interval.0,
            self.interval.1,
            self.allowance,
            self.estimate.mean,
            self.estimate.stderr,
            self.direction(),
            self.excess_sigmas,
            self.estimate.capped_fraction
        )
    }
}

/// Checks whether the 3σ band of `est` meets `interval`.
pub fn mc_validate(interval: (f64, f64), est: McEstimate) -> ValidationReport {
    mc_validate_with_allowance(interval, est, 0.0)
}

/// [`mc_validate`] against the interval widened by `allowance` on each side.
pub fn mc_validate_with_allowance(interval: (f64, f64), est: McEstimate, allowance: f64) -> ValidationReport {
    let allowance = allowance.max(0.0);
    let (lo, hi) = (interval.0 - allowance, interval.1 + allowance);
    let m = est.mean;
    let gap = if m < lo {
        m - lo
    } else if m > hi {
        m - hi
    } else {
        0.0
    };
    let excess_sigmas = if gap == 0.0 {
        0.0
    } else if est.stderr > 0.0 {
        gap / est.stderr
    } else {
        gap.signum() * f64::INFINITY
    };
    let verdict = if gap == 0.0 {
        Verdict::Pass
    } else if excess_sigmas.abs() <= 3.0 {
        Verdict::PassBoundary
    } else {
        Verdict::Fail
    };
    ValidationReport { verdict, interval, estimate: est, allowance, excess_sigmas }
}

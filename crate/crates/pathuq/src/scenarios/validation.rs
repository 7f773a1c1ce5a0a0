//! Monte Carlo containment checks: simulate alternative models inside each
//! scenario's uncertainty class and test the estimates against the bounds.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand_distr::{Distribution, Exp};

use super::*;
use crate::linear_gaussian::solve_riccati;
use crate::mc::{
    mc_validate_with_allowance, simulate_queue, simulate_sde, HittingTime, McEstimate, PathIntegral, PathRng,
    PathSamples, SimConfig, ValidationReport,
};
use crate::relent::queue_jump_rate;

/// Mean overshoot of a Brownian motion over a barrier monitored on a grid,
/// in units of `σ√dt`.
const OVERSHOOT: f64 = 0.5826;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSettings {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Largest number of sweep points checked; points are spread evenly.
    pub max_points: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { n_paths: 10_000, dt: 1e-3, seed: 20_200_506, max_points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub sweep: Option<f64>,
    /// Alternative model that was simulated.
    pub model: String,
    pub report: ValidationReport,
}

impl ValidationCheck {
    pub fn passed(&self) -> bool {
        self.report.verdict.passed()
    }
}

fn sim(settings: &ValidationSettings, t_max: f64) -> SimConfig {
    SimConfig { n_paths: settings.n_paths, dt: settings.dt, t_max, seed: settings.seed }
}

fn spread(n: usize, max_points: usize) -> Vec<usize> {
    let m = max_points.max(1);
    if n <= m {
        return (0..n).collect();
    }
    if m == 1 {
        return vec![0];
    }
    let mut idx: Vec<usize> = (0..m).map(|k| k * (n - 1) / (m - 1)).collect();
    idx.dedup();
    idx
}

/// Bounds of every scenario except `nonrev` against simulated alternatives.
pub fn validate_scenario(cfg: &ScenarioConfig, settings: &ValidationSettings) -> Result<Vec<ValidationCheck>> {
    if !cfg.id.supports_validation() {
        return config_err(format!("no Monte Carlo check exists for {}", cfg.id));
    }
    if settings.n_paths == 0 || !(settings.dt > 0.0) {
        return config_err("validation needs n_paths >= 1 and dt > 0");
    }
    let table = run_scenario(cfg)?;
    let points = cfg.points();
    let mut checks = Vec::new();
    let mut cache = HittingCache::default();
    for i in spread(points.len(), settings.max_points) {
        let point_cfg = cfg.at(points[i]);
        let row = table.rows[i];
        let found = match cfg.id {
            ScenarioId::BmCdf | ScenarioId::BmMean => bm_checks(&point_cfg, &row, settings, &mut cache),
            ScenarioId::LqControl => lq_checks(&point_cfg, &row, settings),
            ScenarioId::Queue => queue_checks(&point_cfg, &row, settings),
            ScenarioId::Vasicek => vasicek_checks(&point_cfg, &row, settings),
            ScenarioId::RateDrop => rate_drop_checks(&point_cfg, &row, settings),
            ScenarioId::Nonrev => unreachable!("rejected above"),
        };
        let found = found.map_err(|e| match points[i] {
            Some(x) => e.at(i, x),
            None => e,
        })?;
        checks.extend(found.into_iter().map(|(model, report)| ValidationCheck { sweep: points[i], model, report }));
    }
    Ok(checks)
}

type Checks = Result<Vec<(String, ValidationReport)>>;

/// Hitting-time samples keyed by `(μ + β, a)` so that a horizon sweep
/// simulates each model once.
#[derive(Default)]
struct HittingCache {
    samples: HashMap<(u64, u64), PathSamples>,
}

impl HittingCache {
    fn get(&mut self, drift: f64, a: f64, t_max: f64, settings: &ValidationSettings) -> Result<&PathSamples> {
        match self.samples.entry((drift.to_bits(), a.to_bits())) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(simulate_sde(
                move |_, _, b| b[0] = drift,
                |_, _, s| s[0] = 1.0,
                &[0.0],
                &sim(settings, t_max),
                move || HittingTime::new(0, a),
            )?)),
        }
    }
}

fn bm_checks(cfg: &ScenarioConfig, row: &CurveRow, settings: &ValidationSettings, cache: &mut HittingCache) -> Checks {
    let (mu, a, alpha) = (cfg.real("mu")?, cfg.real("a")?, cfg.real("alpha")?);
    hitting_law(a, mu)?;
    let horizon = match cfg.id {
        ScenarioId::BmCdf => Some(cfg.real("horizon")?),
        _ => None,
    };
    let shift = OVERSHOOT * settings.dt.sqrt() * a.signum();
    let mut out = Vec::new();
    for (name, beta) in [("baseline", 0.0), ("constant drift +alpha", alpha), ("constant drift -alpha", -alpha)] {
        // β pushes toward the level when it shares the sign of μ
        let drift = mu + beta * mu.signum();
        if drift * a <= 0.0 {
            continue;
        }
        let law = DriftedBmHittingLaw::new(a, drift)?;
        let mean = law.mean()?;
        let t_max = horizon.unwrap_or(0.0).max(2.0 * mean + 60.0 / (drift * drift));
        let samples = cache.get(drift, a, t_max, settings)?;
        let (est, allowance) = match horizon {
            None => (samples.estimate(0), shift.abs() / drift.abs()),
            Some(t) => {
                let hits: Vec<f64> = samples.column(0).iter().map(|tau| if *tau <= t { 1.0 } else { 0.0 }).collect();
                let shifted = DriftedBmHittingLaw::new(a + shift, drift)?;
                (McEstimate::from_samples(&hits, samples.capped_fraction()), (shifted.cdf(t) - law.cdf(t)).abs())
            }
        };
        out.push((name.to_string(), mc_validate_with_allowance((row.lower, row.upper), est, allowance)));
    }
    Ok(out)
}

fn lq_checks(cfg: &ScenarioConfig, row: &CurveRow, settings: &ValidationSettings) -> Checks {
    let prob = cfg.lq_problem()?;
    let alpha = cfg.real("alpha")?;
    let sol = solve_riccati(&prob)?;
    let cost = sol.cost_matrix(&prob);
    let (a_cl, sigma, lam) = (sol.a_cl.clone(), prob.sigma.clone(), prob.lam);
    let n = prob.dim();
    if sigma.ncols() != n {
        return config_err("validation needs a square noise matrix sigma");
    }
    let mut out = Vec::new();
    let x0 = vec![0.0; n];
    type Beta = Box<dyn Fn(&[f64]) -> f64 + Sync>;
    let models: [(&str, Beta); 3] = [
        ("baseline", Box::new(|_| 0.0)),
        ("sinusoidal drift", Box::new(move |x| alpha * x[0].sin())),
        ("constant drift", Box::new(move |_| alpha)),
    ];
    for (name, beta) in models {
        let drift = |_: f64, x: &[f64], b: &mut [f64]| {
            let bx = beta(x);
            for i in 0..n {
                b[i] = (0..n).map(|j| a_cl[(i, j)] * x[j]).sum::<f64>() + sigma[(i, 0)] * bx;
            }
        };
        let diffusion = |_: f64, _: &[f64], s: &mut [f64]| {
            for i in 0..n {
                for j in 0..n {
                    s[i * n + j] = sigma[(i, j)];
                }
            }
        };
        let running = |t: f64, x: &[f64]| {
            let q: f64 = (0..n).map(|i| (0..n).map(|j| x[i] * cost[(i, j)] * x[j]).sum::<f64>()).sum();
            0.5 * q * lam * (-lam * t).exp()
        };
        let cfg =
            SimConfig { dt: settings.dt.max(5e-3), n_paths: settings.n_paths.min(4000), ..sim(settings, 30.0 / lam) };
        let samples = simulate_sde(drift, diffusion, &x0, &cfg, || PathIntegral::new(running))?;
        let mut est = samples.estimate(0);
        est.capped_fraction = 0.0;
        out.push((name.to_string(), mc_validate_with_allowance((row.lower, row.upper), est, 0.0)));
    }
    Ok(out)
}

/// Waiting-time ratio in state `x` given `(δ, ε)`.
type RatioRule = fn(usize, f64, f64) -> f64;

fn queue_checks(cfg: &ScenarioConfig, row: &CurveRow, settings: &ValidationSettings) -> Checks {
    let (alpha, rho) = (cfg.real("alpha")?, cfg.real("rho")?);
    let (delta, eps) = (cfg.real("delta")?, cfg.real("epsilon")?);
    SemiMarkovEnvelope::new(delta, eps, alpha, rho)?;
    let mean = alpha / rho;
    let waiting = |ratio: fn(usize, f64, f64) -> f64| {
        move |x: usize, rng: &mut PathRng| {
            let lam = queue_jump_rate(alpha, rho, x);
            let first = Exp::new(lam).expect("positive rate").sample(rng);
            let r = ratio(x, delta, eps);
            if r == 0.0 {
                first
            } else {
                first + Exp::new(lam / r).expect("positive rate").sample(rng)
            }
        }
    };
    let models: [(&str, RatioRule); 4] = [
        ("baseline", |_, _, _| 0.0),
        ("uniform ratio epsilon", |_, _, e| e),
        ("uniform ratio delta", |_, d, _| d),
        ("alternating ratios", |x, d, e| if x % 2 == 0 { e } else { d }),
    ];
    let cfg = SimConfig { n_paths: settings.n_paths.min(2000), ..sim(settings, 400.0 / rho) };
    let mut out = Vec::new();
    for (name, ratio) in models {
        let est = simulate_queue(alpha, rho, waiting(ratio), &cfg)?;
        let rel = McEstimate { mean: est.mean / mean - 1.0, stderr: est.stderr / mean, ..est };
        out.push((name.to_string(), mc_validate_with_allowance((row.lower, row.upper), rel, 0.0)));
    }
    Ok(out)
}

/// Allowance for the late detection of a downward exercise level: shifting
/// the level by the mean overshoot scales the value by `(L/X₀)^{2r/σ²}`.
fn exercise_allowance(m: &OptionMarket, rate: f64, value: f64, dt: f64) -> f64 {
    value.abs() * (2.0 * rate / (m.sigma * m.sigma)) * OVERSHOOT * m.sigma * dt.sqrt()
}

fn option_t_max(law: &DriftedBmHittingLaw) -> f64 {
    let drift = law.mu.abs();
    2.0 * law.mean().unwrap_or(0.0) + 60.0 / (drift * drift)
}

fn vasicek_checks(cfg: &ScenarioConfig, row: &CurveRow, settings: &ValidationSettings) -> Checks {
    let m = cfg.market()?;
    let (gamma, sigma_tilde) = (cfg.real("gamma")?, cfg.real("sigma_tilde")?);
    let law = m.exercise_law(m.r)?;
    let t_max = option_t_max(&law);
    let level = m.level.ln();
    let mut out = Vec::new();
    for (name, vol) in [("baseline", 0.0), ("Vasicek rate", sigma_tilde)] {
        let drift = |_: f64, x: &[f64], b: &mut [f64]| {
            b[0] = m.r + x[1] - 0.5 * m.sigma * m.sigma;
            b[1] = -gamma * x[1];
            b[2] = m.r + x[1];
        };
        let diffusion = |_: f64, _: &[f64], s: &mut [f64]| {
            s.fill(0.0);
            s[0] = m.sigma;
            s[4] = vol;
        };
        let samples = simulate_sde(drift, diffusion, &[m.x0.ln(), 0.0, 0.0], &sim(settings, t_max), || {
            HittingTime::new(0, level)
        })?;
        // columns: τ, log X, Δr, ∫(r + Δr)
        let payoff: Vec<f64> = samples
            .values
            .iter()
            .map(|v| if v[3] >= 0.0 { (m.strike - m.level) * (-v[3]).exp() } else { 0.0 })
            .collect();
        let event: Vec<f64> = samples.values.iter().map(|v| if v[3] >= 0.0 { 1.0 } else { 0.0 }).collect();
        let est = McEstimate::ratio(&payoff, &event, samples.capped_fraction());
        let allowance = exercise_allowance(&m, m.r, est.mean, settings.dt);
        out.push((name.to_string(), mc_validate_with_allowance((row.lower, row.upper), est, allowance)));
    }
    Ok(out)
}

fn rate_drop_checks(cfg: &ScenarioConfig, row: &CurveRow, settings: &ValidationSettings) -> Checks {
    let m = cfg.market()?;
    let (dr, t_f) = (cfg.real("dr_plus")?, cfg.real("t_f")?);
    let law = m.exercise_law(m.r)?;
    let t_max = option_t_max(&law);
    let level = m.level.ln();
    let mut out = Vec::new();
    for (name, until) in [("baseline", 0.0), ("drop at t_f", t_f), ("drop at t_f/2", 0.5 * t_f)] {
        let extra = move |t: f64| if t < until { dr } else { 0.0 };
        let drift = |t: f64, _: &[f64], b: &mut [f64]| b[0] = m.r + extra(t) - 0.5 * m.sigma * m.sigma;
        let diffusion = |_: f64, _: &[f64], s: &mut [f64]| s[0] = m.sigma;
        let samples =
            simulate_sde(drift, diffusion, &[m.x0.ln()], &sim(settings, t_max), || HittingTime::new(0, level))?;
        let values: Vec<f64> = samples
            .column(0)
            .iter()
            .map(|tau| (m.strike - m.level) * (-(m.r * tau + dr * tau.min(until))).exp())
            .collect();
        let est = McEstimate::from_samples(&values, samples.capped_fraction());
        let allowance = exercise_allowance(&m, m.r + dr, est.mean, settings.dt);
        out.push((name.to_string(), mc_validate_with_allowance((row.lower, row.upper), est, allowance)));
    }
    Ok(out)
}

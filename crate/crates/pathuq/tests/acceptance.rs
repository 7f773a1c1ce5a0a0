//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

#[path = "support/properties.rs"]
mod properties;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathuq::bounds::rel_ent_bootstrap;
use pathuq::linear_gaussian::{control_cost_bound, solve_riccati, LqProblem, RiccatiSolution};
use pathuq::relent::{
    convolution_envelope_rate, discrete_chain_log_ratio_cgf, discrete_chain_stopped_rel_ent,
    discrete_chain_stopped_rel_ent_recursive, DiscreteChainPair, SemiMarkovEnvelope,
};
use pathuq::scenarios::{
    bm_mean_bounds, controller_problem, hitting_mean_interval, queue_relative_error, rate_drop_bounds, run_scenario,
    validate_scenario, CurveTable, OptionMarket, RateDrop, ScenarioConfig, ScenarioId, Sweep, ValidationCheck,
    ValidationSettings,
};

/// Collects failed checks for one criterion.
#[derive(Default)]
struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn within(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check((got - want).abs() <= tol, || format!("{name} = {got:?}, expected {want:?} within {tol:e}"));
    }

    fn runtime(&mut self, elapsed: Duration, limit_seconds: f64) {
        let s = elapsed.as_secs_f64();
        self.check(s < limit_seconds, || format!("runtime {s:.1} s exceeds {limit_seconds} s"));
    }

    fn require<T, E: std::fmt::Display>(&mut self, what: &str, r: Result<T, E>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.failures.push(format!("{what}: {e}"));
                None
            }
        }
    }

    fn checks(&mut self, checks: &[ValidationCheck]) {
        for c in checks {
            let at = c.sweep.map_or(String::new(), |x| format!(" at {x}"));
            self.check(c.passed(), || format!("MC {}{at}: {}", c.model, c.report));
        }
        let boundary = checks.iter().filter(|c| c.passed() && c.report.verdict.label() != "PASS").count();
        self.note(format!("{} MC checks, {boundary} within 3σ of an endpoint", checks.len()));
    }
}

fn rel_close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

fn scenario_with_sweep(id: ScenarioId, variable: &str, values: Vec<f64>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(id);
    cfg.set_sweep(Some(Sweep { variable: variable.into(), values })).expect("valid sweep");
    cfg
}

fn hitting_mean_exactness(o: &mut Outcome) {
    let start = Instant::now();
    let table = o.require("bm_mean_bounds", bm_mean_bounds(1.0, 2.0, 0.2));
    let interval = o.require("hitting_mean_interval", hitting_mean_interval(1.0, 2.0, 0.2));
    o.runtime(start.elapsed(), 1.0);
    if let (Some(table), Some((lo, up))) = (table, interval) {
        let row = table.rows[0];
        o.check(rel_close(row.lower, 5.0 / 3.0, 1e-6), || format!("lower {} != 5/3", row.lower));
        o.check(rel_close(row.upper, 2.5, 1e-6), || format!("upper {} != 5/2", row.upper));
        o.within("c*", lo.optimizer, 0.22, 1e-3);
        o.within("λ*", up.optimizer, 0.18, 1e-3);
        o.note(format!("[{}, {}], c* = {:.6}, λ* = {:.6}", row.lower, row.upper, lo.optimizer, up.optimizer));
    }
}

fn queue_closed_form(o: &mut Outcome) {
    let start = Instant::now();
    if let Some((lo, up)) = o.require("queue_relative_error", queue_relative_error(1.0, 1.0, 0.25)) {
        o.within("upper", up.value, 1.25, 1e-8);
        o.within("lower", lo.value, -0.75, 1e-8);
    }
    let steps = [0.05, 0.02, 0.01, 0.005, 1e-3, 1e-4, 1e-5];
    let rates: Vec<f64> = steps
        .iter()
        .filter_map(|&e| {
            let env = SemiMarkovEnvelope::new(e, e, 1.0, 1.0).expect("valid envelope");
            o.require("envelope rate", convolution_envelope_rate(&env))
        })
        .collect();
    o.runtime(start.elapsed(), 5.0);
    if rates.len() == steps.len() {
        o.check(rates[2] < rates[0], || format!("r(0.01, 0.01) = {} not below r(0.05, 0.05) = {}", rates[2], rates[0]));
        o.check(rates.windows(2).all(|w| w[1] < w[0]), || format!("r along ε = δ not decreasing: {rates:?}"));
        let last = *rates.last().unwrap();
        let linear = steps.iter().zip(&rates).all(|(e, r)| *r >= 0.0 && *r <= *e);
        o.check(linear && last < 1e-3 * rates[0], || format!("r does not vanish: {rates:?}"));
        o.note(format!("r(0.05) = {:.3e}, r(0.01) = {:.3e}, r(1e-5) = {last:.3e}", rates[0], rates[2]));
    }
}

fn hitting_cdf_dominance(o: &mut Outcome) {
    let start = Instant::now();
    let cfg = ScenarioConfig::new(ScenarioId::BmCdf);
    let Some(table) = o.require("bm-cdf bounds", run_scenario(&cfg)) else { return };
    o.check(table.len() == 50, || format!("expected 50 horizons, got {}", table.len()));
    for row in &table.rows {
        let (rl, ru) = (row.ref_lower.unwrap_or(f64::NAN), row.ref_upper.unwrap_or(f64::NAN));
        let t = row.sweep.unwrap_or(f64::NAN);
        o.check(row.upper <= ru + 1e-9, || format!("T = {t}: goal upper {} above {ru}", row.upper));
        o.check(row.lower >= rl - 1e-9, || format!("T = {t}: goal lower {} below {rl}", row.lower));
    }
    let settings = ValidationSettings { n_paths: 100_000, dt: 1e-3, max_points: 50, ..ValidationSettings::default() };
    if let Some(checks) = o.require("bm-cdf validation", validate_scenario(&cfg, &settings)) {
        let drifted: Vec<_> = checks.into_iter().filter(|c| c.model.contains("alpha")).collect();
        o.check(drifted.len() == 100, || format!("expected 100 drifted checks, got {}", drifted.len()));
        o.checks(&drifted);
    }
    o.runtime(start.elapsed(), 120.0);
}

fn nonreversible_reference(o: &mut Outcome) {
    let start = Instant::now();
    let Some(table) = o.require("nonrev bounds", run_scenario(&ScenarioConfig::new(ScenarioId::Nonrev))) else {
        return;
    };
    o.runtime(start.elapsed(), 30.0);
    for row in &table.rows {
        let c = row.sweep.unwrap_or(f64::NAN);
        let (rl, ru) = (row.ref_lower.unwrap_or(f64::NAN), row.ref_upper.unwrap_or(f64::NAN));
        if c == 0.0 {
            o.within("lower at C = 0", row.lower, 1.0, 1e-3);
            o.within("upper at C = 0", row.upper, 1.0, 1e-3);
        } else {
            o.check(rl < row.lower && row.upper < ru, || {
                format!("C = {c}: [{}, {}] not strictly inside [{rl}, {ru}]", row.lower, row.upper)
            });
        }
    }
    if let Some(row) = table.rows.iter().find(|r| r.sweep == Some(1.0)) {
        o.note(format!(
            "C = 1: [{:.4}, {:.4}] inside [{:.4}, {:.4}]",
            row.lower,
            row.upper,
            row.ref_lower.unwrap(),
            row.ref_upper.unwrap()
        ));
    }
}

/// Frobenius norm of `B_λᵀY + YB_λ + Q − YDR⁻¹DᵀY`.
fn riccati_residual(p: &LqProblem, sol: &RiccatiSolution) -> f64 {
    let n = p.dim();
    let bl = &p.b - DMatrix::identity(n, n) * (0.5 * p.lam);
    let r_inv = p.r.clone().try_inverse().expect("invertible control cost");
    let y = &sol.y;
    (bl.transpose() * y + y * &bl + &p.q - y * &p.d * r_inv * p.d.transpose() * y).norm()
}

/// `∫ ½tr(Σ_s C) λe^{−λs} ds` with `Σ` and the integral advanced together by
/// fixed-step RK4.
fn discounted_cost_by_ode(p: &LqProblem, a: &DMatrix<f64>, cost: &DMatrix<f64>) -> f64 {
    let noise = &p.sigma * p.sigma.transpose();
    let rhs = |t: f64, s: &DMatrix<f64>| {
        let ds = a * s + s * a.transpose() + &noise;
        (ds, 0.5 * (s * cost).trace() * p.lam * (-p.lam * t).exp())
    };
    let (h, t_end) = (1e-3, 80.0 / p.lam);
    let (mut s, mut j, mut t) = (p.sigma0.clone(), 0.0, 0.0);
    while t < t_end {
        let (k1, j1) = rhs(t, &s);
        let (k2, j2) = rhs(t + 0.5 * h, &(&s + &k1 * (0.5 * h)));
        let (k3, j3) = rhs(t + 0.5 * h, &(&s + &k2 * (0.5 * h)));
        let (k4, j4) = rhs(t + h, &(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        j += (j1 + 2.0 * j2 + 2.0 * j3 + j4) * (h / 6.0);
        t += h;
    }
    j
}

fn control_problem(o: &mut Outcome) {
    let start = Instant::now();
    let Some(prob) = o.require("controller problem", controller_problem(2.0)) else { return };
    let Some(sol) = o.require("Riccati", solve_riccati(&prob)) else { return };
    let residual = riccati_residual(&prob, &sol);
    o.check(residual <= 1e-10, || format!("Riccati residual {residual:e}"));
    let exact = discounted_cost_by_ode(&prob, &sol.a_cl, &sol.cost_matrix(&prob));
    if let Some(b) = o.require("zero-budget bound", control_cost_bound(&prob, 0.0)) {
        o.within("lower at α = 0", b.lower.bound.value, exact, 1e-6);
        o.within("upper at α = 0", b.upper.bound.value, exact, 1e-6);
        o.within("baseline", b.baseline, exact, 1e-6);
    }
    let cfg = scenario_with_sweep(ScenarioId::LqControl, "kappa", vec![2.0]);
    if let Some(checks) = o.require("LQ validation", validate_scenario(&cfg, &ValidationSettings::default())) {
        o.check(checks.iter().any(|c| c.model.contains("sin")), || "no nonlinear perturbation was simulated".into());
        o.checks(&checks);
    }
    o.note(format!("residual {residual:.1e}, baseline cost {exact:.10}"));
    o.runtime(start.elapsed(), 120.0);
}

fn widths(table: &CurveTable) -> Vec<(f64, f64, f64)> {
    let mut w: Vec<_> =
        table.rows.iter().map(|r| (r.sweep.unwrap_or(f64::NAN), r.upper - r.lower, r.baseline)).collect();
    w.sort_by(|a, b| a.0.total_cmp(&b.0));
    w
}

fn vasicek(o: &mut Outcome) {
    let start = Instant::now();
    let Some(table) = o.require("vasicek bounds", run_scenario(&ScenarioConfig::new(ScenarioId::Vasicek))) else {
        return;
    };
    let w = widths(&table);
    if let Some(&(s, width, base)) = w.first() {
        o.check(s == 1e-3 && width < 1e-2 * base, || format!("width {width} at σ̃ = {s} vs baseline {base}"));
        o.note(format!("width at σ̃ = 1e-3: {width:.2e}, at σ̃ = 3: {:.4}", w.last().unwrap().1));
    }
    o.check(w.windows(2).all(|p| p[1].1 >= p[0].1), || format!("widths not monotone: {w:?}"));
    let cfg = scenario_with_sweep(ScenarioId::Vasicek, "sigma_tilde", vec![1.0]);
    let settings = ValidationSettings { n_paths: 100_000, dt: 2.5e-4, ..ValidationSettings::default() };
    if let Some(checks) = o.require("vasicek validation", validate_scenario(&cfg, &settings)) {
        o.checks(&checks);
    }
    o.runtime(start.elapsed(), 300.0);
}

fn rate_drop(o: &mut Outcome) {
    let market = OptionMarket { r: 2.0, sigma: 3.0, strike: 1.0, level: 0.5, x0: 2.0 };
    let p = RateDrop { market, dr_plus: 0.3 };
    let grid: Vec<f64> = (0..17).map(|i| 0.25 * i as f64).collect();
    let Some(plain) = o.require("rate-drop bounds", rate_drop_bounds(&p, &grid, false)) else { return };
    let Some(tuned) = o.require("rate-optimized bounds", rate_drop_bounds(&p, &grid, true)) else { return };
    let value = |rate: f64| 0.5 * 0.25f64.powf(2.0 * rate / 9.0);
    for row in &plain.rows {
        o.within("baseline", row.baseline, 0.5 * 0.25f64.powf(4.0 / 9.0), 1e-10);
        o.within("reference at r + Δr", row.ref_lower.unwrap_or(f64::NAN), value(2.3), 1e-10);
        o.within("reference at r", row.ref_upper.unwrap_or(f64::NAN), value(2.0), 1e-10);
    }
    let first = plain.rows[0];
    o.within("lower at t_f = 0", first.lower, first.baseline, 1e-6);
    o.within("upper at t_f = 0", first.upper, first.baseline, 1e-6);
    for (a, b) in plain.rows.iter().zip(&tuned.rows) {
        o.check(b.lower >= a.lower, || format!("t_f = {:?}: optimized lower {} below {}", a.sweep, b.lower, a.lower));
    }
    let (a, b) = (plain.rows[16], tuned.rows[16]);
    o.note(format!("t_f = 4: plain [{:.5}, {:.5}], optimized [{:.5}, {:.5}]", a.lower, a.upper, b.lower, b.upper));
}

fn random_stochastic(rng: &mut ChaCha8Rng, k: usize, allow_zero: bool) -> Vec<f64> {
    let mut v: Vec<f64> =
        (0..k).map(|_| if allow_zero && rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn chain_oracles(o: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut instances = 0;
    for k in [2usize, 3] {
        for _ in 0..40 {
            let base: Vec<f64> = (0..k).flat_map(|_| random_stochastic(&mut rng, k, false)).collect();
            let alt: Vec<f64> = (0..k).flat_map(|_| random_stochastic(&mut rng, k, true)).collect();
            let stop: Vec<bool> = (0..k).map(|_| rng.random_bool(0.3)).collect();
            let base_init = DVector::from_vec(random_stochastic(&mut rng, k, false));
            let alt_init = DVector::from_vec(random_stochastic(&mut rng, k, true));
            let pair = DiscreteChainPair::new(
                DMatrix::from_row_slice(k, k, &base),
                DMatrix::from_row_slice(k, k, &alt),
                base_init,
                alt_init,
            )
            .expect("valid chains");
            let mut previous = 0.0;
            for n in 0..=8 {
                instances += 1;
                let exact = discrete_chain_stopped_rel_ent(&pair, &stop, n).expect("enumerable");
                let product = discrete_chain_stopped_rel_ent_recursive(&pair, &stop, n).expect("valid");
                o.check((exact - product).abs() <= 1e-12, || format!("k = {k}, N = {n}: {exact} vs {product}"));
                o.check(exact >= previous - 1e-15, || format!("k = {k}: N = {n} gives {exact} below {previous}"));
                previous = exact;
                let cgf = discrete_chain_log_ratio_cgf(&pair, &stop, n).expect("enumerable");
                let boot = rel_ent_bootstrap(&cgf).map(|b| b.value).unwrap_or(f64::INFINITY);
                o.check(boot >= exact - 1e-12, || format!("k = {k}, N = {n}: bootstrap {boot} below {exact}"));
            }
        }
    }
    o.note(format!("{instances} chain instances"));
}

fn invariant_suites(o: &mut Outcome) {
    let start = Instant::now();
    let config = properties::config();
    for (name, property) in properties::ALL {
        if let Err(e) = property(&config) {
            o.failures.push(format!("{name}: {e}"));
        }
    }
    o.note(format!("{} properties × {} cases", properties::ALL.len(), config.cases));
    o.runtime(start.elapsed(), 120.0);
}

type Criterion = (&'static str, fn(&mut Outcome));

fn main() {
    let criteria: [Criterion; 9] = [
        ("hitting-time mean equals the optimal interval", hitting_mean_exactness),
        ("queue bound matches its closed form", queue_closed_form),
        ("goal-oriented CDF bounds dominate and contain MC", hitting_cdf_dominance),
        ("non-reversible bounds sit inside the reference", nonreversible_reference),
        ("LQ control: Riccati, collapse, MC containment", control_problem),
        ("Vasicek: vanishing width, monotone, MC containment", vasicek),
        ("rate drop: references, collapse, rate optimization", rate_drop),
        ("discrete-chain oracles agree", chain_oracles),
        ("randomized invariant suites", invariant_suites),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = Outcome::default();
        run(&mut outcome);
        let verdict = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {}: {verdict} {title} ({secs:.1} s) {}", i + 1, outcome.notes.join("; "));
        for f in &outcome.failures {
            println!("    {f}");
        }
        failed += usize::from(!outcome.failures.is_empty());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

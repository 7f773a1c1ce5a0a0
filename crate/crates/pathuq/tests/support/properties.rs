use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestRunner;

use pathuq::bounds::{event_prob_bound, info_bound, CgfHandle, Side};
use pathuq::cgf::{DriftedBmHittingLaw, GaussianQuadraticForm, OuSquaredIntegral, QueueCgfLimit};
use pathuq::numerics::{integrate_interval, integrate_tail, QuadratureSpec};
use pathuq::relent::{
    discrete_chain_stopped_rel_ent, discrete_chain_stopped_rel_ent_recursive, DiscreteChainPair, PhaseType, WaitingTime,
};
use pathuq::scenarios::hitting_mean_interval;

/// 1000 cases per property without failure files.
pub fn config() -> ProptestConfig {
    ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() }
}

/// Midpoint convexity `Λ((x+y)/2) ≤ (Λ(x)+Λ(y))/2` up to rounding.
fn midpoint_convex(f: impl Fn(f64) -> f64, x: f64, y: f64) -> Result<(), TestCaseError> {
    let (fx, fy, fm) = (f(x), f(y), f(0.5 * (x + y)));
    let slack = 1e-10 * (1.0 + fx.abs() + fy.abs());
    prop_assert!(fm <= 0.5 * (fx + fy) + slack, "f({x})={fx}, f({y})={fy}, midpoint {fm}");
    Ok(())
}

fn queue_cgf() -> impl Strategy<Value = QueueCgfLimit> {
    (0.1..5.0f64, 0.1..5.0f64).prop_map(|(a, r)| QueueCgfLimit::new(a, r).unwrap())
}

fn hitting_law() -> impl Strategy<Value = DriftedBmHittingLaw> {
    (0.1..4.0f64, 0.1..3.0f64, prop::bool::ANY).prop_map(|(a, mu, neg)| {
        if neg { DriftedBmHittingLaw::new(-a, -mu) } else { DriftedBmHittingLaw::new(a, mu) }.unwrap()
    })
}

/// A phase-type law with up to three phases and positive exit rates.
fn phase_type() -> impl Strategy<Value = PhaseType> {
    (1usize..=3).prop_flat_map(|k| {
        (
            prop::collection::vec(0.05..1.0f64, k),
            prop::collection::vec(0.0..2.0f64, k * k),
            prop::collection::vec(0.2..3.0f64, k),
        )
            .prop_map(move |(nu, off, exit)| {
                let total: f64 = nu.iter().sum();
                let nu = DVector::from_iterator(k, nu.iter().map(|p| p / total));
                let mut t = DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { off[i * k + j] });
                for i in 0..k {
                    t[(i, i)] = -(t.row(i).sum() + exit[i]);
                }
                PhaseType::new(nu, t).unwrap()
            })
    })
}

fn stochastic_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn chain_pair() -> impl Strategy<Value = (DiscreteChainPair, Vec<bool>, usize)> {
    (2usize..=3).prop_flat_map(|k| {
        (
            prop::collection::vec(stochastic_row(k), k),
            prop::collection::vec(stochastic_row(k), k),
            prop::collection::vec(prop::bool::ANY, k),
            0..k,
            0usize..=6,
        )
            .prop_map(move |(p, q, stop, start, n)| {
                let m = |rows: &Vec<Vec<f64>>| DMatrix::from_fn(k, k, |i, j| rows[i][j]);
                (DiscreteChainPair::from_state(m(&p), m(&q), start).unwrap(), stop, n)
            })
    })
}

/// Turns `fn name(pat in strategy, ...) { body }` items into functions that
/// run the property under a given configuration, and lists them in `ALL`.
macro_rules! properties {
    ($(fn $name:ident($($arg:pat in $strat:expr),+ $(,)?) $body:block)*) => {
        $(
            pub fn $name(config: &ProptestConfig) -> Result<(), String> {
                let mut runner = TestRunner::new(config.clone());
                runner
                    .run(&($($strat,)+), |($($arg,)+)| {
                        $body
                        Ok(())
                    })
                    .map_err(|e| e.to_string())
            }
        )*

        pub const ALL: &[(&str, fn(&ProptestConfig) -> Result<(), String>)] = &[$((stringify!($name), $name)),*];
    };
}

properties! {

    fn hitting_cgf_is_convex(law in hitting_law(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let lim = law.exponential_moment_limit();
        let (x, y) = (-4.0 + 4.0 * u + lim * u * 0.99, -4.0 + (4.0 + lim * 0.99) * v);
        midpoint_convex(|c| law.cgf(c).unwrap(), x, y)?;
    }

    fn queue_cgf_is_convex(q in queue_cgf(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let (x, y) = (-5.0 + (5.0 + 0.99 * q.rho) * u, -5.0 + (5.0 + 0.99 * q.rho) * v);
        midpoint_convex(|c| q.cgf(c), x, y)?;
        prop_assert_eq!(q.cgf(0.0), 0.0);
    }

    fn gaussian_quadratic_cgf_is_convex(
        s in prop::collection::vec(-1.0..1.0f64, 4),
        d in prop::collection::vec(-1.0..1.0f64, 2),
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
    ) {
        let l = DMatrix::from_row_slice(2, 2, &s);
        let sigma = &l * l.transpose() + DMatrix::identity(2, 2) * 0.05;
        let form = GaussianQuadraticForm::new(sigma, DMatrix::identity(2, 2), DVector::from_vec(d)).unwrap();
        let top = 0.95 * form.c_max();
        midpoint_convex(|c| form.cgf(c), -3.0 + (3.0 + top) * u, -3.0 + (3.0 + top) * v)?;
    }

    fn ou_log_mgf_is_convex_in_the_tilt(
        gamma in 0.2..3.0f64,
        sigma_tilde in 0.1..2.0f64,
        t in 0.05..5.0f64,
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
    ) {
        let ou = OuSquaredIntegral::new(gamma, sigma_tilde, 1.0).unwrap();
        let top = 0.95 * ou.branch_point();
        midpoint_convex(|l| ou.log_mgf(t, l).unwrap(), -2.0 + (2.0 + top) * u, -2.0 + (2.0 + top) * v)?;
    }

    fn event_intervals_are_valid(p in 0.0..=1.0f64, eta in 0.0..5.0f64) {
        let (lo, hi) = event_prob_bound(p, eta).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-9 && p <= hi + 1e-9, "[{lo}, {hi}] misses {p}");
    }

    fn centered_bounds_bracket_zero(q in queue_cgf(), eta in 0.0..5.0f64) {
        let cgf = q.cgf_handle();
        let up = info_bound(&cgf, eta, Side::Upper).unwrap().value;
        let lo = info_bound(&cgf, eta, Side::Lower).unwrap().value;
        prop_assert!(lo <= 1e-9 && up >= -1e-9, "[{lo}, {up}]");
    }

    fn hitting_mean_interval_contains_baseline(mu in 0.2..3.0f64, a in 0.1..4.0f64, frac in 0.0..0.95f64) {
        let (lo, up) = hitting_mean_interval(mu, a, frac * mu).unwrap();
        let mean = a / mu;
        prop_assert!(lo.value <= mean * (1.0 + 1e-9) && mean <= up.value * (1.0 + 1e-9));
    }

    fn intervals_widen_with_budget(p in 0.01..0.99f64, q in queue_cgf(), e1 in 0.0..3.0f64, extra in 0.0..3.0f64) {
        let e2 = e1 + extra;
        let (lo1, hi1) = event_prob_bound(p, e1).unwrap();
        let (lo2, hi2) = event_prob_bound(p, e2).unwrap();
        prop_assert!(lo2 <= lo1 + 1e-9 && hi1 <= hi2 + 1e-9);
        let cgf = q.cgf_handle();
        for side in [Side::Upper, Side::Lower] {
            let w1 = side.sign() * info_bound(&cgf, e1, side).unwrap().value;
            let w2 = side.sign() * info_bound(&cgf, e2, side).unwrap().value;
            prop_assert!(w1 <= w2 + 1e-9 * (1.0 + w2.abs()), "{side:?}: {w1} then {w2}");
        }
    }

    fn zero_budget_collapses(p in 0.0..=1.0f64, q in queue_cgf(), mu in 0.2..3.0f64, a in 0.1..4.0f64) {
        let (lo, hi) = event_prob_bound(p, 0.0).unwrap();
        prop_assert!((lo - p).abs() < 1e-6 && (hi - p).abs() < 1e-6, "[{lo}, {hi}] vs {p}");
        let cgf = q.cgf_handle();
        for side in [Side::Upper, Side::Lower] {
            prop_assert!(info_bound(&cgf, 0.0, side).unwrap().value.abs() < 1e-6);
        }
        let (lo, up) = hitting_mean_interval(mu, a, 0.0).unwrap();
        prop_assert!((lo.value * mu / a - 1.0).abs() < 1e-6 && (up.value * mu / a - 1.0).abs() < 1e-6);
    }

    fn phase_type_laws_are_normalized(pt in phase_type(), t in 0.0..10.0f64) {
        let scale = 1.0 / pt.slowest_rate();
        let spec = QuadratureSpec::default().with_rel_tol(1e-10);
        let mass = integrate_tail(|s| pt.density(s), 0.0, scale, &spec).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-7, "total mass {mass}");
        let v = pt.eval(t);
        let partial = integrate_interval(|s| pt.density(s), 0.0, t, &spec).unwrap();
        prop_assert!((partial - v.cdf).abs() < 1e-7, "cdf {} vs integral {partial}", v.cdf);
        let mean = integrate_tail(|s| 1.0 - pt.eval(s).cdf, 0.0, scale, &spec).unwrap();
        prop_assert!((mean - pt.mean()).abs() < 1e-6 * pt.mean(), "mean {} vs integral {mean}", pt.mean());
    }

    fn hitting_cdf_matches_integrated_density(law in hitting_law(), t in 0.01..20.0f64) {
        let spec = QuadratureSpec::default().with_rel_tol(1e-11);
        let integral = integrate_interval(|s| law.density(s), 0.0, t, &spec).unwrap();
        prop_assert!((integral - law.cdf(t)).abs() < 1e-8, "{integral} vs {}", law.cdf(t));
    }

    fn hitting_cgf_matches_quadrature(law in hitting_law(), u in -1.0..0.9f64) {
        let c = u * law.exponential_moment_limit();
        let spec = QuadratureSpec::default().with_rel_tol(1e-11);
        let scale = law.time_scale().max(1.0 / (law.exponential_moment_limit() - c));
        let integral = integrate_tail(|s| (c * s + law.log_density(s)).exp(), 0.0, scale, &spec).unwrap();
        let closed = law.cgf(c).unwrap().exp();
        prop_assert!((integral / closed - 1.0).abs() < 1e-7, "{integral} vs {closed}");
    }

    fn ou_log_mgf_matches_integrated_variance_for_small_tilts(
        gamma in 0.2..3.0f64,
        sigma_tilde in 0.1..2.0f64,
        t in 0.05..5.0f64,
    ) {
        // d/dλ log E[exp(λ/2 ∫Δr²)] at λ = 0 equals ½ E[∫Δr²].
        let ou = OuSquaredIntegral::new(gamma, sigma_tilde, 1.0).unwrap();
        let h = 1e-5 * ou.branch_point().min(1.0);
        let slope = (ou.log_mgf(t, h).unwrap() - ou.log_mgf(t, -h).unwrap()) / (2.0 * h);
        let spec = QuadratureSpec::default().with_rel_tol(1e-11);
        let var = |s: f64| sigma_tilde * sigma_tilde * -(-2.0 * gamma * s).exp_m1() / (2.0 * gamma);
        let expected = 0.5 * integrate_interval(var, 0.0, t, &spec).unwrap();
        prop_assert!((slope / expected - 1.0).abs() < 1e-5, "{slope} vs {expected}");
        let cov = |s: f64| integrate_interval(|u| (-gamma * (s - u)).exp() * var(u), 0.0, s, &spec).unwrap();
        let integrated = 2.0 * integrate_interval(cov, 0.0, t, &spec.with_rel_tol(1e-9)).unwrap();
        prop_assert!((ou.integrated_variance(t) / integrated - 1.0).abs() < 1e-7, "{} vs {integrated}", ou.integrated_variance(t));
    }

    fn chain_enumeration_matches_recursion((pair, stop, n) in chain_pair()) {
        let exact = discrete_chain_stopped_rel_ent(&pair, &stop, n).unwrap();
        let rec = discrete_chain_stopped_rel_ent_recursive(&pair, &stop, n).unwrap();
        prop_assert!(exact >= -1e-14);
        prop_assert!((exact - rec).abs() <= 1e-12 * (1.0 + exact), "{exact} vs {rec}");
    }

    fn bernoulli_cgf_is_centered(p in 0.0..=1.0f64, c in -10.0..10.0f64) {
        let cgf = CgfHandle::bernoulli_centered(p);
        prop_assert!(cgf.eval(0.0).abs() < 1e-15);
        prop_assert!(cgf.eval(c) >= -1e-12);
    }
}

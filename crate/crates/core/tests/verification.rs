//! Candidate value fields pass the (sub)martingale checks exactly when they should.

use std::sync::Arc;

use branchlab_core::estimate::{compare_policies, submartingale_test, ZeroField};
use branchlab_core::kinetic::{kinetic_feedback_policy, solve_kinetic_hjb, KineticGrid};
use branchlab_core::lq::{lq_feedback_policy, lq_perturbed_policy, lq_value, solve_riccati, RiccatiSolution};
use branchlab_core::scenario::{builtin_kinetic, KineticParts, LqCoefficients};
use branchlab_core::*;

const CHECKPOINTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn lq_coeffs() -> LqCoefficients {
    LqCoefficients::scalar(0.2, 1.0, 0.5, 0.2, vec![0.5, 0.0, 0.5], 1.0, 0.0, 1.0, 1.0, 0.1)
}

fn lq_start() -> AtomicMeasure {
    embed(1, &[[1.0], [-0.5]]).unwrap()
}

#[test]
fn lq_optimal_feedback_is_a_martingale() {
    let coeffs = lq_coeffs();
    let scn = builtin_lq(coeffs.clone()).unwrap();
    let sol = Arc::new(solve_riccati(&coeffs, 1.0, 1000).unwrap());
    let cfg = SimConfig::new(1e-3, 1.0);
    let ens = Ensemble::new(4000, 31);
    let opt = lq_feedback_policy(sol.clone());
    let r = submartingale_test(
        &scn,
        &opt,
        0.0,
        &lq_start(),
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Martingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");

    let zero = Policy::zero(1);
    let r = submartingale_test(
        &scn,
        &zero,
        0.0,
        &lq_start(),
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Submartingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.total.z > 4.0, "drift under zero control {:?}", r.total);
    // and the same ensemble rejects the martingale hypothesis
    let r = submartingale_test(
        &scn,
        &zero,
        0.0,
        &lq_start(),
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Martingale,
        4.0,
    )
    .unwrap();
    assert!(!r.passed);

    let perturbed = lq_perturbed_policy(sol.clone(), 0.5);
    let r = submartingale_test(
        &scn,
        &perturbed,
        0.0,
        &lq_start(),
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Submartingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed && r.total.mean > 0.0, "{r:?}");
}

#[test]
fn lq_optimal_cost_matches_value() {
    let coeffs = lq_coeffs();
    let scn = builtin_lq(coeffs.clone()).unwrap();
    let sol = Arc::new(solve_riccati(&coeffs, 1.0, 1000).unwrap());
    let cfg = SimConfig::new(1e-3, 1.0);
    let est = estimate_cost(
        &scn,
        &lq_feedback_policy(sol.clone()),
        0.0,
        &lq_start(),
        &cfg,
        &Ensemble::new(4000, 8),
    )
    .unwrap();
    let w = lq_value(0.0, &lq_start(), &sol).unwrap();
    assert!(est.within(w, 3.0, 0.02 * w.abs()), "{est:?} vs {w}");
}

#[test]
fn lq_optimal_beats_alternatives() {
    let coeffs = lq_coeffs();
    let scn = builtin_lq(coeffs.clone()).unwrap();
    let sol = Arc::new(solve_riccati(&coeffs, 1.0, 1000).unwrap());
    let cfg = SimConfig::new(1e-3, 1.0);
    let ens = Ensemble::new(2000, 5);
    let opt = lq_feedback_policy(sol.clone());
    for other in [Policy::zero(1), lq_perturbed_policy(sol.clone(), 0.5)] {
        let cmp = compare_policies(&scn, &opt, &other, 0.0, &lq_start(), &cfg, &ens).unwrap();
        assert!(cmp.a_better(3.0), "{cmp:?}");
    }
}

#[test]
fn zero_field_is_a_submartingale_for_nonnegative_costs() {
    let coeffs = lq_coeffs();
    let scn = builtin_lq(coeffs).unwrap();
    let r = submartingale_test(
        &scn,
        &Policy::zero(1),
        0.0,
        &lq_start(),
        &ZeroField,
        &SimConfig::new(1e-2, 1.0),
        &Ensemble::new(200, 1),
        &CHECKPOINTS,
        VerifyMode::Submartingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed);
}

fn kinetic() -> scenario::KineticScenario {
    // critical binary branching keeps the potential at zero
    builtin_kinetic(KineticParts {
        dim: 1,
        drift: Arc::new(|_, _| vec![0.0]),
        drift_bound: 0.0,
        branch_rate: Arc::new(|_, _| 1.0),
        rate_bound: 1.0,
        offspring: Arc::new(|_, _| vec![0.5, 0.0, 0.5]),
        offspring_bounds: (1.0, 1.0),
        terminal: Arc::new(|x| x[0] * x[0]),
        terminal_bound: 1.0,
    })
}

#[test]
fn kinetic_feedback_verifies_and_improves_cost() {
    let scn = kinetic();
    let grid = KineticGrid {
        time_steps: 10_000,
        stored_slices: 100,
        ..KineticGrid::default()
    };
    let sol = Arc::new(solve_kinetic_hjb(&scn, 1.0, &grid).unwrap());
    let pol = kinetic_feedback_policy(sol.clone());
    let l0 = embed(1, &[[1.0], [-0.5]]).unwrap();
    let cfg = SimConfig::new(1e-3, 1.0);
    let ens = Ensemble::new(3000, 4);
    let r = submartingale_test(
        &scn,
        &pol,
        0.0,
        &l0,
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Martingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
    let r = submartingale_test(
        &scn,
        &Policy::zero(1),
        0.0,
        &l0,
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Submartingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed && r.total.z > 4.0, "{r:?}");
    let cmp = compare_policies(&scn, &pol, &Policy::zero(1), 0.0, &l0, &cfg, &ens).unwrap();
    assert!(cmp.a_better(3.0), "{cmp:?}");
}

/// The LQ field with p replaced by the solution of p' + γM₁p + c = 0.
struct SingleCrossTerm {
    sol: Arc<RiccatiSolution>,
    rate: f64,
    c_mass: f64,
    h_mass: f64,
}

impl ValueField for SingleCrossTerm {
    fn value(&self, t: f64, lambda: &AtomicMeasure) -> f64 {
        let (_, p, _) = self.sol.at(t).unwrap();
        let tau = 1.0 - t;
        let e = (self.rate * tau).exp();
        let p_alt = self.h_mass * e + self.c_mass * (e - 1.0) / self.rate;
        let n = lambda.mass() as f64;
        lq_value(t, lambda, &self.sol).unwrap() + (p_alt - p) * n * n
    }
}

#[test]
fn mass_coefficient_needs_the_doubled_cross_term() {
    // supercritical law, M₁ = 0.3, with mass costs switched on
    let (gamma, c_mass, h_mass) = (1.0, 0.3, 0.5);
    let coeffs = LqCoefficients::scalar(0.0, 1.0, 0.5, gamma, vec![0.2, 0.3, 0.5], 1.0, c_mass, 1.0, 1.0, h_mass);
    let scn = builtin_lq(coeffs.clone()).unwrap();
    let sol = Arc::new(solve_riccati(&coeffs, 1.0, 1000).unwrap());
    let cfg = SimConfig::new(1e-3, 1.0);
    let ens = Ensemble::new(4000, 17);
    let opt = lq_feedback_policy(sol.clone());
    let r = submartingale_test(
        &scn,
        &opt,
        0.0,
        &lq_start(),
        sol.as_ref(),
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Martingale,
        4.0,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
    let alt = SingleCrossTerm {
        sol: sol.clone(),
        rate: gamma * 0.3,
        c_mass,
        h_mass,
    };
    let r = submartingale_test(
        &scn,
        &opt,
        0.0,
        &lq_start(),
        &alt,
        &cfg,
        &ens,
        &CHECKPOINTS,
        VerifyMode::Martingale,
        4.0,
    )
    .unwrap();
    assert!(!r.passed, "{r:?}");
}

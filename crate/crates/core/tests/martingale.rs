//! The compensated functionals of the martingale problem have zero-mean increments.

use branchlab_core::estimate::{martingale_test, Functional, OuterFn, TestFunction};
use branchlab_core::*;

fn scalar() -> Dims {
    Dims {
        state: 1,
        noise: 1,
        action: 1,
    }
}

const CHECKPOINTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn identity_one() -> Functional {
    Functional {
        outer: OuterFn::Identity,
        test: TestFunction::One,
    }
}

#[test]
fn pure_death_compensated_mass() {
    let scn = GenericScenario::inert("death", scalar()).with_constant_branching(1.0, vec![1.0]);
    let l0 = embed(1, &[[0.0]]).unwrap();
    let reports = martingale_test(
        &scn,
        &Policy::zero(1),
        0.0,
        &l0,
        &SimConfig::new(1e-3, 1.0),
        &Ensemble::new(10_000, 1),
        &[identity_one()],
        &CHECKPOINTS,
        4.0,
    )
    .unwrap();
    assert!(reports[0].passed, "{:?}", reports[0]);
}

#[test]
fn frozen_system_has_zero_increments() {
    let scn = GenericScenario::inert("frozen", scalar());
    let l0 = embed(1, &[[0.0], [2.0]]).unwrap();
    let funcs = [
        identity_one(),
        Functional {
            outer: OuterFn::ExpNeg,
            test: TestFunction::Bump {
                center: vec![0.5],
                width: 1.0,
            },
        },
    ];
    let reports = martingale_test(
        &scn,
        &Policy::zero(1),
        0.0,
        &l0,
        &SimConfig::new(1e-2, 1.0),
        &Ensemble::new(20, 1),
        &funcs,
        &CHECKPOINTS,
        4.0,
    )
    .unwrap();
    for r in reports {
        assert!(r.intervals.iter().all(|i| i.z == 0.0 && i.mean == 0.0));
        assert!(r.passed);
    }
}

#[test]
fn drift_only_increments_vanish_with_the_step() {
    let scn = GenericScenario::inert("drift", scalar()).with_constant_motion(vec![1.0], 0.0);
    let l0 = embed(1, &[[-1.0]]).unwrap();
    let funcs = [Functional {
        outer: OuterFn::Square,
        test: TestFunction::Sigmoid {
            direction: vec![2.0],
            offset: 0.0,
        },
    }];
    let worst = |dt: f64| {
        let r = martingale_test(
            &scn,
            &Policy::zero(1),
            0.0,
            &l0,
            &SimConfig::new(dt, 1.0),
            &Ensemble::new(2, 1),
            &funcs,
            &CHECKPOINTS,
            4.0,
        )
        .unwrap();
        r[0].intervals.iter().map(|i| i.mean.abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (worst(1e-2), worst(5e-3));
    assert!(coarse < 1e-2, "{coarse}");
    // left-point quadrature error is first order
    assert!((coarse / fine - 2.0).abs() < 0.2, "{coarse} / {fine}");
}

#[test]
fn several_functionals_on_a_branching_ou_population() {
    let mut scn = GenericScenario::inert("ou", scalar())
        .with_constant_motion(vec![0.0], 1.0)
        .with_constant_branching(1.0, vec![0.3, 0.2, 0.5]);
    scn.drift = std::sync::Arc::new(|_, x, _, a| vec![-x[0] + a[0]]);
    let l0 = embed(1, &[[0.5]]).unwrap();
    let funcs = vec![
        identity_one(),
        Functional {
            outer: OuterFn::Square,
            test: TestFunction::One,
        },
        Functional {
            outer: OuterFn::ExpNeg,
            test: TestFunction::One,
        },
        Functional {
            outer: OuterFn::Identity,
            test: TestFunction::Bump {
                center: vec![0.0],
                width: 0.8,
            },
        },
        Functional {
            outer: OuterFn::Square,
            test: TestFunction::Sigmoid {
                direction: vec![1.5],
                offset: 0.2,
            },
        },
    ];
    let pol = Policy::feedback(|_, x, _| vec![0.5 * x[0].sin()]);
    let reports = martingale_test(
        &scn,
        &pol,
        0.0,
        &l0,
        &SimConfig::new(1e-3, 1.0),
        &Ensemble::new(4000, 12),
        &funcs,
        &CHECKPOINTS,
        4.0,
    )
    .unwrap();
    assert_eq!(reports.len(), 5);
    for r in &reports {
        assert!(r.passed, "{}: {:?}", r.functional, r.intervals);
    }
    assert!(reports[0].quadratic_variation.is_some());
    assert!(reports[1].quadratic_variation.is_none());
}

#[test]
fn binary_branching_quadratic_variation() {
    let scn = GenericScenario::inert("binary", scalar()).with_constant_branching(1.0, vec![0.0, 0.0, 1.0]);
    let l0 = embed(1, &[[0.0]]).unwrap();
    let r = martingale_test(
        &scn,
        &Policy::zero(1),
        0.0,
        &l0,
        &SimConfig::new(1e-3, 1.0),
        &Ensemble::new(10_000, 3),
        &[identity_one()],
        &CHECKPOINTS,
        4.0,
    )
    .unwrap()
    .remove(0);
    let qv = r.quadratic_variation.as_ref().unwrap();
    assert!(qv.iter().all(|i| i.z.abs() < 4.0), "{qv:?}");
    assert!(r.passed);
}

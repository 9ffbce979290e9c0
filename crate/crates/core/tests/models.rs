mod common;

use clf_etc::dynamics::{feedback_at, finite_difference_gradient, lyapunov_derivative, verify_clf_pointwise};
use clf_etc::models::*;
use clf_etc::sampling::HaltonBox;
use clf_etc::StateVector;
use common::Rng;
use proptest::prelude::*;

fn all_models() -> Vec<Model> {
    vec![
        acc_backstepping(1.01, TauLag::default(), 25.0, 40.0).unwrap(),
        acc_backstepping(2.0, TauLag::Constant(0.5), 25.0, 40.0).unwrap(),
        homogeneous_planar(HomogRate::Square),
        homogeneous_planar(HomogRate::HalfSquare),
        zeno_polar(0.3, 0.0).unwrap(),
        relay_1d(),
    ]
}

#[test]
fn every_certificate_holds_on_ten_thousand_samples() {
    for m in all_models() {
        let d = m.descriptor.state_dim;
        let r = m.descriptor.check_radius;
        let h = HaltonBox::new(vec![-r; d], vec![r; d], 7);
        let pts: Vec<StateVector> = (0..10_000).map(|i| StateVector::new(h.point(i)).unwrap()).collect();
        let report = verify_clf_pointwise(m.cert(), m.sys(), &pts).unwrap();
        assert!(report.passed(), "{}: {:?}", m.descriptor.name, &report.violations[..report.violations.len().min(3)]);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(3);
    for m in all_models() {
        let d = m.descriptor.state_dim;
        for _ in 0..50 {
            let x = rng.point(d, m.descriptor.check_radius);
            let mut g = vec![0.0; d];
            m.cert().gradient(&x, &mut g);
            let fd = finite_difference_gradient(m.cert(), &x);
            for i in 0..d {
                assert!((g[i] - fd[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "{} at {x:?}", m.descriptor.name);
            }
        }
    }
}

#[test]
fn acc_closed_loop_field_and_rate_identity() {
    let k = 1.01;
    let m = acc_backstepping(k, TauLag::default(), 25.0, 40.0).unwrap();
    let mut rng = Rng::new(11);
    for _ in 0..100 {
        let x = rng.point(3, 20.0);
        let u = feedback_at(m.cert(), &x);
        let mut f = [0.0; 3];
        m.sys().rhs(&x, &u, &mut f);
        let want = [x[1] - k * x[0], x[2] - k * x[1], x[0] - k * x[2]];
        for i in 0..3 {
            assert!((f[i] - want[i]).abs() <= 1e-11 * (1.0 + want[i].abs()));
        }
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        let v = m.cert().value(&x);
        let spread = (x[0] - x[1]).powi(2) + (x[0] - x[2]).powi(2) + (x[1] - x[2]).powi(2);
        assert!((w + 2.0 * (k - 1.0) * v + 0.5 * spread).abs() <= 1e-10 * (1.0 + spread));
    }
}

#[test]
fn acc_lag_as_function_of_speed() {
    let lag: clf_etc::dynamics::ScalarFn = std::sync::Arc::new(|v: f64| 0.3 + 0.001 * v * v);
    let m = acc_backstepping(1.5, TauLag::Function(lag), 25.0, 40.0).unwrap();
    assert!(m.descriptor.known_constants.kappa.is_none());
    let mut rng = Rng::new(5);
    for _ in 0..100 {
        let x = rng.point(3, 10.0);
        let u = feedback_at(m.cert(), &x);
        let mut f = [0.0; 3];
        m.sys().rhs(&x, &u, &mut f);
        // the closed loop does not depend on the lag
        assert!((f[2] - (x[0] - 1.5 * x[2])).abs() <= 1e-10 * (1.0 + x[0].abs() + x[2].abs()));
    }
}

#[test]
fn homogeneous_identity_and_scaling() {
    let m = homogeneous_planar(HomogRate::Square);
    let mut rng = Rng::new(13);
    for _ in 0..100 {
        let x = rng.point(2, 2.0);
        let u = feedback_at(m.cert(), &x);
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        assert!((w + x[0].powi(4) + x[1].powi(4)).abs() < 1e-12);
        let lambda = rng.uniform(0.1, 3.0);
        let xs = [lambda * x[0], lambda * x[1]];
        let us = feedback_at(m.cert(), &xs);
        let (mut f, mut fs) = ([0.0; 2], [0.0; 2]);
        m.sys().rhs(&x, &u, &mut f);
        m.sys().rhs(&xs, &us, &mut fs);
        for i in 0..2 {
            assert!((fs[i] - lambda.powi(3) * f[i]).abs() <= 1e-12 * (1.0 + fs[i].abs()));
        }
    }
}

#[test]
fn zeno_polar_identities_and_bound() {
    let m = zeno_polar(0.5, 0.0).unwrap();
    let mut rng = Rng::new(17);
    for _ in 0..100 {
        let x = rng.point(2, 1.0);
        let r2 = x[0] * x[0] + x[1] * x[1];
        let u = feedback_at(m.cert(), &x);
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        assert!((w + r2).abs() < 1e-14);
        assert!((w + m.cert().rate().eval(m.cert().value(&x))).abs() < 1e-14);
        let mut f = [0.0; 2];
        m.sys().rhs(&x, &u, &mut f);
        assert!((f[0] * f[0] + f[1] * f[1] - (2.0 * r2 + 2.0 * r2.sqrt() + 1.0)).abs() < 1e-12);
    }
    assert_eq!(feedback_at(m.cert(), &[0.0, 0.0]), vec![0.0, 0.0]);
    let s = 0.5 * 1.25f64.sqrt();
    assert_eq!(zeno_first_event_bound(0.5), s * 0.5f64.atan() / (s + 0.75));
    for bad in [0.0, 1.0, -0.2, 1.5] {
        assert!(zeno_polar(bad, 0.0).is_err());
    }
    // the bound does not depend on the angle, and neither does the state radius
    let x = zeno_initial_state(0.3, 2.0);
    assert!(((x[0] * x[0] + x[1] * x[1]).sqrt() - 0.3).abs() < 1e-15);
}

#[test]
fn relay_rate_identity() {
    let m = relay_1d();
    let mut rng = Rng::new(19);
    for _ in 0..100 {
        let x = rng.uniform(-5.0, 5.0);
        let u = feedback_at(m.cert(), &[x]);
        let w = lyapunov_derivative(m.cert(), m.sys(), &[x], &u).unwrap();
        assert!((w + 2.0 * x.abs()).abs() < 1e-14);
        assert!((m.cert().rate().eval(x * x) - 2.0 * x.abs()).abs() < 1e-14);
    }
    assert_eq!(m.descriptor.expected_status, AssumptionStatus::ViolatesNondegeneracy);
}

proptest! {
    #[test]
    fn acc_coordinates_round_trip(d in 0.0f64..200.0, v in 0.0f64..40.0, a in -5.0f64..5.0, k in 1.001f64..3.0) {
        let c = AccCoordinates { k, v0: 25.0, d0: 40.0 };
        let x = c.to_state(d, v, a);
        let back = c.from_state(&x);
        prop_assert!((back[0] - d).abs() <= 1e-12 * (1.0 + d.abs()));
        prop_assert!((back[1] - v).abs() <= 1e-12 * (1.0 + v.abs()) * (1.0 + k * k * d.abs()));
        prop_assert!((back[2] - a).abs() <= 1e-12 * (1.0 + k * k * (d.abs() + v.abs())) * 10.0);
        prop_assert!((c.speed(&x) - v).abs() <= 1e-12 * (1.0 + v.abs()) * (1.0 + k * d.abs()));
    }
}

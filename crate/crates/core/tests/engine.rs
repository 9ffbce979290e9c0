mod common;

use clf_etc::dynamics::{feedback_at, ControlSystem};
use clf_etc::models::*;
use clf_etc::scheduling::{Schedule, TriggerPolicy, TriggerReason};
use clf_etc::sim::export::check_rate_certificate;
use clf_etc::sim::{integrate_frozen, run_closed_loop, run_stats, IntegratorConfig, SimError, Termination};
use common::{acc_affine, affine_flow, max_abs_diff};

fn event(sigma: f64) -> TriggerPolicy {
    TriggerPolicy::EventTriggered { sigma }
}

#[test]
fn relay_switches_off_exactly_at_the_origin() {
    let m = relay_1d();
    for x0 in [1.0, 0.25, -3.0, 7.5] {
        for sigma in [0.1, 0.5, 0.9] {
            let traj = run_closed_loop(m.sys(), m.cert(), &event(sigma), &[x0], &IntegratorConfig::with_horizon(10.0)).unwrap();
            assert_eq!(traj.events.len(), 2);
            assert_eq!(traj.events[0].t, 0.0);
            assert!((traj.events[1].t - f64::abs(x0)).abs() <= 1e-9, "{x0}: {}", traj.events[1].t);
            assert_eq!(traj.events[1].u, vec![0.0]);
            assert_eq!(traj.events[1].reason, TriggerReason::EquilibriumFrozen);
            assert_eq!(traj.termination, Termination::Equilibrium);
        }
    }
}

#[test]
fn frozen_acc_flow_matches_matrix_exponential() {
    let k = 1.01;
    let m = acc_backstepping(k, TauLag::default(), 25.0, 40.0).unwrap();
    let (a, b) = acc_affine(k, 0.3);
    let mut rng = common::Rng::new(23);
    for _ in 0..20 {
        let x0 = rng.point(3, 15.0);
        let u = feedback_at(m.cert(), &x0);
        let cfg = IntegratorConfig { rel_tol: 1e-12, abs_tol: 1e-13, ..IntegratorConfig::with_horizon(1.0) };
        let seg = integrate_frozen(m.sys(), &x0, &u, (0.0, 1.0), &cfg).unwrap();
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let exact = affine_flow(&a, &(&b * u[0]), &x0, t);
            assert!(max_abs_diff(&seg.eval(t), &exact) < 1e-8, "t={t}");
        }
    }
}

struct Rotation;
impl ControlSystem for Rotation {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0];
    }
}

#[test]
fn rotation_preserves_radius_over_many_periods() {
    let sys = Rotation;
    let cfg = IntegratorConfig { rel_tol: 1e-11, abs_tol: 1e-13, ..IntegratorConfig::with_horizon(20.0 * std::f64::consts::PI) };
    let seg = integrate_frozen(&sys, &[1.0, 0.0], &[0.0], (0.0, cfg.horizon), &cfg).unwrap();
    for i in 0..=200 {
        let t = cfg.horizon * i as f64 / 200.0;
        let x = seg.eval(t);
        assert!(((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).abs() < 1e-8);
        assert!((x[0] - t.cos()).abs() < 1e-8);
    }
}

#[test]
fn homogeneous_run_has_two_events() {
    let m = homogeneous_planar(HomogRate::Square);
    let traj = run_closed_loop(m.sys(), m.cert(), &event(0.9), &[0.1, 0.4], &IntegratorConfig::with_horizon(200.0)).unwrap();
    let s = run_stats(&traj);
    assert_eq!(s.n_events, 2);
    assert!((s.first_event_time.unwrap() - 5.26).abs() < 0.3);
    let u = traj.events[1].u[0].abs();
    assert!((1e-7..=3e-6).contains(&u), "{u}");
    assert!(check_rate_certificate(&traj, m.cert()).unwrap().passed());
}

#[test]
fn event_times_are_stable_under_tighter_tolerances() {
    let m = acc_backstepping(1.01, TauLag::default(), 25.0, 40.0).unwrap();
    let x0 = acc_case2_state(1.01);
    let run = |rtol: f64| {
        let cfg = IntegratorConfig { rel_tol: rtol, abs_tol: rtol * 1e-2, ..IntegratorConfig::with_horizon(20.0) };
        run_closed_loop(m.sys(), m.cert(), &event(0.9), &x0, &cfg).unwrap()
    };
    let a = run(1e-9);
    let b = run(5e-10);
    assert_eq!(a.events.len(), b.events.len());
    for (ea, eb) in a.events.iter().zip(&b.events).take(20) {
        assert!((ea.t - eb.t).abs() < 1e-6, "{} vs {}", ea.t, eb.t);
    }
}

#[test]
fn guard_is_zero_at_every_triggered_event() {
    let m = acc_backstepping(1.01, TauLag::default(), 25.0, 40.0).unwrap();
    let traj = run_closed_loop(m.sys(), m.cert(), &event(0.9), &acc_case1_state(1.01), &IntegratorConfig::with_horizon(60.0)).unwrap();
    for e in traj.events.iter().filter(|e| e.reason == TriggerReason::GuardZero) {
        let v = m.cert().value(&e.x);
        let scale = m.cert().rate().eval(v);
        assert!(e.guard_value >= 0.0 && e.guard_value <= 1e-6 * scale.max(1e-300), "{}", e.guard_value);
    }
    let s = run_stats(&traj);
    assert!(s.min_dwell.unwrap() > 0.0);
    assert!(check_rate_certificate(&traj, m.cert()).unwrap().passed());
}

#[test]
fn time_triggered_schedule_is_followed() {
    let m = homogeneous_planar(HomogRate::Square);
    let policy = TriggerPolicy::TimeTriggered { sigma: 0.9, schedule: Schedule::Period(0.3) };
    let traj = run_closed_loop(m.sys(), m.cert(), &policy, &[0.1, 0.4], &IntegratorConfig::with_horizon(3.0)).unwrap();
    assert_eq!(traj.events.len(), 11);
    for (i, e) in traj.events.iter().enumerate() {
        assert!((e.t - 0.3 * i as f64).abs() < 1e-12);
    }
    let instants = TriggerPolicy::TimeTriggered { sigma: 0.9, schedule: Schedule::Instants(vec![0.5, 0.7]) };
    let traj = run_closed_loop(m.sys(), m.cert(), &instants, &[0.1, 0.4], &IntegratorConfig::with_horizon(1.2)).unwrap();
    let times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
    let want = [0.0, 0.5, 0.7, 0.9, 1.1];
    assert_eq!(times.len(), want.len());
    for (t, w) in times.iter().zip(want) {
        assert!((t - w).abs() < 1e-12);
    }
}

#[test]
fn near_zeno_run_aborts() {
    let m = zeno_polar(0.01, 0.0).unwrap();
    let cfg = IntegratorConfig { zeno_floor: 1e-4, ..IntegratorConfig::with_horizon(5.0) };
    let traj = run_closed_loop(m.sys(), m.cert(), &event(0.9), &zeno_initial_state(0.01, 0.0), &cfg).unwrap();
    assert_eq!(traj.termination, Termination::ZenoAbort);
    assert!(traj.events[1].t <= zeno_first_event_bound(0.01));
}

#[test]
fn outputs_are_deterministic() {
    let m = acc_backstepping(1.01, TauLag::default(), 25.0, 40.0).unwrap();
    let cfg = IntegratorConfig::with_horizon(60.0);
    let a = run_closed_loop(m.sys(), m.cert(), &event(0.9), &acc_case1_state(1.01), &cfg).unwrap();
    let b = run_closed_loop(m.sys(), m.cert(), &event(0.9), &acc_case1_state(1.01), &cfg).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.events, b.events);
}

#[test]
fn bad_inputs_are_rejected() {
    let m = homogeneous_planar(HomogRate::Square);
    let cfg = IntegratorConfig::with_horizon(1.0);
    assert!(matches!(run_closed_loop(m.sys(), m.cert(), &event(0.9), &[0.1], &cfg), Err(SimError::Dynamics(_))));
    assert!(run_closed_loop(m.sys(), m.cert(), &event(1.0), &[0.1, 0.4], &cfg).is_err());
    assert!(run_closed_loop(m.sys(), m.cert(), &event(0.9), &[f64::NAN, 0.4], &cfg).is_err());
    let bad = IntegratorConfig { rel_tol: -1.0, ..cfg };
    assert!(matches!(run_closed_loop(m.sys(), m.cert(), &event(0.9), &[0.1, 0.4], &bad), Err(SimError::Config(_))));
}

#[test]
fn starting_at_the_origin_freezes_immediately() {
    let m = homogeneous_planar(HomogRate::Square);
    let traj = run_closed_loop(m.sys(), m.cert(), &event(0.9), &[0.0, 0.0], &IntegratorConfig::with_horizon(1.0)).unwrap();
    assert_eq!(traj.events.len(), 1);
    assert_eq!(traj.termination, Termination::Equilibrium);
}

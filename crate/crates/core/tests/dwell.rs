mod common;

use std::sync::Arc;

use clf_etc::certificates::{
    bound_sublevel_box, compute_mu, estimate_kappa, BoxOptions, CertificateConstants, KnownConstants, Provenance,
    SamplingOptions,
};
use clf_etc::dwell::*;
use clf_etc::models::*;
use proptest::prelude::*;

fn constants(kappa: f64, nu: f64, big_m: f64) -> CertificateConstants {
    CertificateConstants::new(kappa, nu, big_m, 0.0, Provenance::ClosedForm).unwrap()
}

#[test]
fn c_bound_matches_its_integral() {
    for kappa in [0.0, 0.3, 1.0, 4.88] {
        for t in [1e-10, 1e-4, 0.01, 0.2, 1.0] {
            let a = 2.0 * kappa + 1.0;
            // Simpson on ∫₀ᵗ e^{as} ds
            let n = 2000;
            let h = t / n as f64;
            let f = |s: f64| (a * s).exp();
            let mut acc = f(0.0) + f(t);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            let want = (acc * h / 3.0).sqrt();
            assert!((c_bound(kappa, t) - want).abs() <= 1e-9 * want, "κ={kappa} t={t}");
        }
    }
}

#[test]
fn acc_reference_dwell() {
    let c = constants(4.88, 1.0, 10.25);
    assert!((c.mu - 14.9).abs() < 0.05);
    let tau = tau_tilde(&DwellInputs::new(c, 0.9, GammaMode::Nondecreasing)).unwrap();
    assert_eq!(tau.branch, DwellBranch::Rate);
    let want = 0.01 / (c.mu * c.mu * 10.25 * 10.25);
    assert!((tau.value - want).abs() <= 1e-15);
}

#[test]
fn sampled_kappa_is_bracketed_by_the_known_value() {
    let m = acc_backstepping(1.01, TauLag::default(), 25.0, 40.0).unwrap();
    let known = m.descriptor.known_constants.kappa.unwrap();
    let region = bound_sublevel_box(m.cert(), &acc_case1_state(1.01), &BoxOptions::default()).unwrap();
    let opts = SamplingOptions::default();
    let est = estimate_kappa(m.sys(), m.cert(), &region, &opts).unwrap();
    assert!(est.value <= known * opts.safety_factor * (1.0 + 1e-9), "{} vs {known}", est.value);
    assert!(est.value >= 0.5 * known, "{} vs {known}", est.value);
}

#[test]
fn level_bucket_base_equals_global_tau_min() {
    let m = homogeneous_planar(HomogRate::Square);
    let x0 = [0.1, 0.4];
    let kind = DwellKind::Tau { sigma: 0.9 };
    let opts = TauMinOptions { n_anchors: 32, ..TauMinOptions::default() };
    let region = bound_sublevel_box(m.cert(), &x0, &opts.boxing).unwrap();
    let known = m.descriptor.known_constants;
    let global = tau_min_over_sublevel(m.sys(), m.cert(), &region, &known, kind, &opts).unwrap();
    let buckets = Arc::new(LevelBucketTau::new(m.system.clone(), m.certificate.clone(), &x0, kind, known, opts));
    assert_eq!(buckets.tau(&x0).unwrap(), global.value);
    // smaller states get at least the base value, and get their own bucket
    let inner = [0.01, 0.04];
    let t_inner = buckets.tau(&inner).unwrap();
    assert!(t_inner >= global.value);
    assert!(buckets.bucket(m.cert().value(&inner)) > 0);
    assert_eq!(buckets.computed().len(), 2);
    let f = buckets.clone().into_tau_fn();
    assert_eq!(f(&inner), t_inner);
}

#[test]
fn bucket_levels_bracket_the_value() {
    let m = homogeneous_planar(HomogRate::Square);
    let b = LevelBucketTau::new(
        m.system.clone(),
        m.certificate.clone(),
        &[0.1, 0.4],
        DwellKind::Tau { sigma: 0.5 },
        KnownConstants::default(),
        TauMinOptions::default(),
    );
    let mut rng = common::Rng::new(29);
    for _ in 0..200 {
        let x = rng.point(2, 0.4);
        let v = m.cert().value(&x);
        let j = b.bucket(v);
        if j > 0 && j < 200 && v <= b.level(0) {
            assert!(b.level(j) >= v && b.level(j + 1) < v, "v={v} j={j}");
        }
    }
}

#[test]
fn decreasing_rates_need_the_c1_branch() {
    let c = CertificateConstants::new(1.0, 1.0, 2.0, 0.5, Provenance::ClosedForm).unwrap();
    let inp = DwellInputs::new(c, 0.5, GammaMode::C1);
    let hat = tau_hat(&inp).unwrap();
    assert!(hat.value <= tau_tilde(&DwellInputs { sigma: 0.75, ..inp }).unwrap().value);
    let breve = tau_breve(&inp.with_periodic(0.8, 2.0)).unwrap();
    assert!(breve.value > 0.0);
    assert!(tau_hat(&DwellInputs::new(c, 0.5, GammaMode::Nondecreasing)).is_err());
    assert!(tau_bar(&inp).is_err());
    assert!(tau_bar(&inp.with_periodic(0.4, 2.0)).is_err());
    assert!(tau_bar(&inp.with_periodic(0.8, 1.0)).is_err());
}

proptest! {
    #[test]
    fn tau_decreases_in_sigma(k in 0.0f64..5.0, n in 0.01f64..3.0, bm in 0.1f64..20.0, s1 in 0.01f64..0.98, ds in 0.0f64..0.5) {
        let c = constants(k, n, bm);
        let s2 = (s1 + ds).min(0.99);
        let a = tau_tilde(&DwellInputs::new(c, s1, GammaMode::Nondecreasing)).unwrap().value;
        let b = tau_tilde(&DwellInputs::new(c, s2, GammaMode::Nondecreasing)).unwrap().value;
        prop_assert!(b <= a);
        prop_assert!(a <= 1.0 / (1.0 + 2.0 * k));
        prop_assert!((c.mu - compute_mu(k, n)).abs() == 0.0);
    }

    #[test]
    fn tau_bar_decreases_in_k(k in 0.0f64..5.0, bm in 0.1f64..20.0, s in 0.05f64..0.9, big_k in 1.01f64..10.0, dk in 0.0f64..10.0) {
        let c = constants(k, 1.0, bm);
        let st = 0.5 * (1.0 + s);
        let a = tau_bar(&DwellInputs::new(c, s, GammaMode::Nondecreasing).with_periodic(st, big_k)).unwrap().value;
        let b = tau_bar(&DwellInputs::new(c, s, GammaMode::Nondecreasing).with_periodic(st, big_k + dk)).unwrap().value;
        prop_assert!(b <= a);
        // periodic checks cost dwell time
        let t = tau_tilde(&DwellInputs::new(c, s, GammaMode::Nondecreasing)).unwrap().value;
        prop_assert!(a <= t * (1.0 + 1e-12));
    }
}

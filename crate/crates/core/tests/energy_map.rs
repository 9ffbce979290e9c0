use std::sync::Arc;

use clf_etc::dynamics::quadrature::integrate;
use clf_etc::{EnergyTimeMap, RateFunction};
use proptest::prelude::*;

fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> EnergyTimeMap {
    EnergyTimeMap::new(RateFunction::custom(Arc::new(f), None, true))
}

/// `∫₁ˢ dv/γ(v)` straight from the definition, on a geometric split of the
/// interval so each piece is smooth and short.
fn gamma_big_reference(gamma: &dyn Fn(f64) -> f64, s: f64) -> f64 {
    let (lo, hi, sign) = if s >= 1.0 { (1.0, s, 1.0) } else { (s, 1.0, -1.0) };
    let n = 64;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut total = 0.0;
    let mut a = lo;
    for _ in 0..n {
        let b = a * ratio;
        total += integrate(|v| 1.0 / gamma(v), a, b, 1e-13, 0.0).unwrap().value;
        a = b;
    }
    sign * total
}

#[test]
fn closed_forms_match_direct_quadrature() {
    let cases: Vec<(EnergyTimeMap, Box<dyn Fn(f64) -> f64>)> = vec![
        (EnergyTimeMap::new(RateFunction::linear(0.02).unwrap()), Box::new(|v| 0.02 * v)),
        (EnergyTimeMap::new(RateFunction::linear(2.0).unwrap()), Box::new(|v| 2.0 * v)),
        (EnergyTimeMap::new(RateFunction::power(1.0, 2.0).unwrap()), Box::new(|v| v * v)),
        (EnergyTimeMap::new(RateFunction::power(0.5, 2.0).unwrap()), Box::new(|v| 0.5 * v * v)),
        (EnergyTimeMap::new(RateFunction::power(2.0, 0.5).unwrap()), Box::new(|v: f64| 2.0 * v.sqrt())),
        (EnergyTimeMap::new(RateFunction::power(3.0, 1.5).unwrap()), Box::new(|v: f64| 3.0 * v.powf(1.5))),
    ];
    for (map, gamma) in &cases {
        for &s in &[1e-6, 1e-3, 0.2, 0.9, 1.0, 1.7, 10.0, 1e3, 1e6] {
            let closed = map.gamma_big(s).unwrap();
            let reference = gamma_big_reference(gamma.as_ref(), s);
            let quad = map.gamma_big_quadrature(s).unwrap();
            let scale = reference.abs().max(1e-300);
            assert!((closed - reference).abs() <= 1e-8 * scale.max(1e-8), "{:?} s={s}: {closed} vs {reference}", map.rate().form());
            assert!((quad - closed).abs() <= 1e-8 * closed.abs().max(1e-8), "{:?} s={s}: {quad} vs {closed}", map.rate().form());
        }
    }
}

#[test]
fn limits_of_power_rates() {
    let fast = EnergyTimeMap::new(RateFunction::power(2.0, 0.5).unwrap());
    assert_eq!(fast.lower_limit(), -1.0);
    assert_eq!(fast.gamma_big_inverse(-1.0).unwrap(), 0.0);
    assert_eq!(fast.gamma_big_inverse(-3.0).unwrap(), 0.0);
    // finite-time convergence: V(t) = 0 once t ≥ Γ(V₀) − Γ̲
    let v0 = 2.25;
    let t_hit = fast.gamma_big(v0).unwrap() - fast.lower_limit();
    assert!((t_hit - 1.5).abs() < 1e-14);
    assert_eq!(fast.convergence_bound(1.0, v0, t_hit + 1e-9).unwrap(), 0.0);
    let slow = EnergyTimeMap::new(RateFunction::power(1.0, 2.0).unwrap());
    assert_eq!(slow.upper_limit(), 1.0);
    assert!(slow.gamma_big_inverse(1.0).is_err());
    // γ = cv²: V(t) ≤ 1/(1/V₀ + σct)
    let half = EnergyTimeMap::new(RateFunction::power(0.5, 2.0).unwrap());
    let b = half.convergence_bound(0.9, 0.085, 3.0).unwrap();
    assert!((b - 1.0 / (1.0 / 0.085 + 0.9 * 0.5 * 3.0)).abs() < 1e-15);
}

fn rates() -> impl Strategy<Value = EnergyTimeMap> {
    prop_oneof![
        (0.01f64..5.0).prop_map(|ae| EnergyTimeMap::new(RateFunction::linear(ae).unwrap())),
        (0.1f64..4.0, 0.3f64..3.0).prop_map(|(ae, a)| EnergyTimeMap::new(RateFunction::power(ae, a).unwrap())),
        (0.1f64..3.0, 0.1f64..2.0).prop_map(|(a, b)| custom(move |v| a * v + b * v * v)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gamma_big_is_increasing(map in rates(), s1 in 1e-4f64..1e4, f in 1.001f64..10.0) {
        let s2 = s1 * f;
        prop_assert!(map.gamma_big(s1).unwrap() < map.gamma_big(s2).unwrap());
    }

    #[test]
    fn inverse_round_trip(map in rates(), s in 1e-4f64..1e4) {
        let r = map.gamma_big(s).unwrap();
        let back = map.gamma_big_inverse(r).unwrap();
        prop_assert!((back - s).abs() <= 1e-8 * s.max(1.0), "{s} -> {r} -> {back}");
    }

    #[test]
    fn convergence_bound_is_nonincreasing(map in rates(), v0 in 1e-3f64..1e3, sigma in 0.05f64..0.99, t in 0.0f64..50.0, dt in 0.0f64..5.0) {
        let a = map.convergence_bound(sigma, v0, t).unwrap();
        let b = map.convergence_bound(sigma, v0, t + dt).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-10) + 1e-300);
        prop_assert!(a <= v0 * (1.0 + 1e-10));
    }

    #[test]
    fn quadrature_agrees_with_closed_form(ae in 0.05f64..5.0, a in 0.3f64..3.0, s in 1e-3f64..1e3) {
        let map = EnergyTimeMap::new(RateFunction::power(ae, a).unwrap());
        let closed = map.gamma_big(s).unwrap();
        let quad = map.gamma_big_quadrature(s).unwrap();
        prop_assert!((quad - closed).abs() <= 1e-8 * closed.abs().max(1e-10));
    }
}

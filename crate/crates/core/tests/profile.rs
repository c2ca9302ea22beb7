use proptest::prelude::*;
use std::f64::consts::{E, PI};
use wildsphere::profile::*;

// Composite Simpson rule, kept separate from the library quadrature.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

// With w = ln r the band energy is σ ∫ (-w)^{-n} dw over w ∈ [-e^{s+τ}, -e^s].
fn band_energy_oracle(s: f64, tau: f64, n: usize) -> f64 {
    // Split geometrically so each panel sees a bounded ratio of |w|.
    let pieces = 64;
    let mut total = 0.0;
    for i in 0..pieces {
        let a = -(s + tau * (pieces - i) as f64 / pieces as f64).exp();
        let b = -(s + tau * (pieces - i - 1) as f64 / pieces as f64).exp();
        total += simpson(|w: f64| (-w).powi(-(n as i32)), a, b, 64);
    }
    sphere_area(n) * total
}

#[test]
fn loglog_coordinate() {
    let (v, g) = eta((-E).exp()).unwrap();
    assert!((v - 1.0).abs() < 1e-15);
    let r = (-E).exp();
    let h = 1e-7 * r;
    let fd = (eta(r + h).unwrap().0 - eta(r - h).unwrap().0) / (2.0 * h);
    assert!((fd.abs() - g).abs() / g < 1e-6);
    assert!((g - (E - 1.0).exp()).abs() / g < 1e-12);
    let near_edge = eta((-1.0f64).exp() * (1.0 - 1e-9)).unwrap().0;
    assert!(near_edge > 0.0 && near_edge < 1e-8);
}

#[test]
fn truncation_band() {
    let (s, t): (f64, f64) = (2.0, 3.5);
    let mid = (-(s + 0.5 * (t - s)).exp()).exp();
    assert!((truncate(s, t, mid).unwrap() - 0.5 * (t - s)).abs() < 1e-12);
    let edge = (-(s.exp())).exp();
    for f in [1.0, 1.01, 1.5, 3.0] {
        assert_eq!(truncate(s, t, (edge * f).min(0.999)).unwrap(), 0.0);
    }
    let p = RadialProfile::truncation(2.0, 0.0, -3.0, 2);
    assert_eq!(profile_energy(&p, 1e-8).unwrap(), 0.0);
}

#[test]
fn closed_form_value() {
    let e = truncation_energy(5.0, 1.0, 2);
    let expect = 2.0 * PI * ((-5.0f64).exp() - (-6.0f64).exp());
    assert!((e - expect).abs() < 1e-15);
    assert!((e - 0.026761).abs() < 5e-7);
    let oracle = band_energy_oracle(5.0, 1.0, 2);
    assert!((e - oracle).abs() / oracle < 1e-6, "{e} {oracle}");
    assert!(truncation_energy(5.0, 1e-12, 2) < 1e-12);
    assert!(truncation_energy(5.5, 1.0, 2) < e);
}

#[test]
fn solver_example() {
    let sol = solve_s(0.1, 1.0, 2, 0.01, 0.0).unwrap();
    assert!((sol.s - 5.985).abs() < 1e-3);
    let e = 2.0 * PI * (-sol.s).exp() * (1.0 - (-1.0f64).exp());
    assert!(e < 0.01);
    // Support e^{-e^s} ≈ e^{-397} far below δ/2.
    let ln_support = -sol.s.exp();
    assert!((ln_support + 397.0).abs() < 1.0);
    assert!(ln_support <= (0.05f64).ln());
    let huge = solve_s(0.1, 1.0, 2, 1e200, 0.0).unwrap();
    assert!(huge.support_bound);
    assert!((huge.s.exp() - (2.0f64 / 0.1).ln()).abs() < 1e-9);
}

#[test]
fn narrow_blend_approaches_truncation() {
    let base = RadialProfile::truncation(4.0, 1.0, -3.0, 2);
    let closed = base.closed_energy();
    let mut last = 0.0;
    for w in [0.2, 0.05, 0.01, 0.001] {
        let e = profile_energy(&smooth(&base, w).unwrap(), 1e-10).unwrap();
        assert!(e <= closed && e >= last);
        last = e;
    }
    assert!((closed - last) / closed < 1e-2);
    let plain = profile_energy(&base, 1e-10).unwrap();
    assert!((plain - closed).abs() / closed < 1e-4);
}

#[test]
fn blends_are_c2() {
    let p = smooth(&RadialProfile::truncation(3.0, 2.0, -3.0, 2), 0.2).unwrap();
    let h = 1e-4;
    for joint in p.breakpoints() {
        let left = (p.rho_v(joint) - 2.0 * p.rho_v(joint - h) + p.rho_v(joint - 2.0 * h)) / (h * h);
        let right = (p.rho_v(joint + 2.0 * h) - 2.0 * p.rho_v(joint + h) + p.rho_v(joint)) / (h * h);
        assert!((left - right).abs() < 1e-4 * (1.0 + left.abs()) + 2.0 * h * 30.0, "{joint}: {left} {right}");
        assert!(p.curvature_v(joint).abs() < 1e-12);
    }
    let plateau = p.plateau();
    assert_eq!(p.rho_v(plateau.v), p.tau);
    assert_eq!(p.rho_v(plateau.v + 1.0), p.tau);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_matches_quadrature(s in 1.0f64..20.0, tau in 0.1f64..5.0, n in 2usize..=4) {
        let closed = truncation_energy(s, tau, n);
        let numeric = profile_energy(&RadialProfile::truncation(s, tau, -(s.exp()) + 1.0, n), 1e-9).unwrap();
        prop_assert!((closed - numeric).abs() / closed < 1e-4);
        let oracle = band_energy_oracle(s, tau, n);
        prop_assert!((closed - oracle).abs() / closed < 1e-4);
    }

    #[test]
    fn solver_meets_budget_and_support(delta in 1e-3f64..1e-1, tau in 0.1f64..5.0, n in 2usize..=3, width in 0.01f64..0.25) {
        let budget = delta.powi(n as i32);
        let sol = solve_s(delta, tau, n, budget, 4.0 * width).unwrap();
        let p = smooth(&RadialProfile::truncation(sol.s, tau, delta.ln(), n), width).unwrap();
        let e = profile_energy(&p, 1e-9).unwrap();
        prop_assert!(e < budget);
        prop_assert!(p.support().ln_radius() <= (0.5 * delta).ln());
    }

    #[test]
    fn gradient_matches_finite_differences(s in 1.0f64..3.0, tau in 0.2f64..2.0, frac in 0.02f64..0.98, width in 0.0f64..0.25) {
        let base = RadialProfile::truncation(s, tau, -3.0, 2);
        let p = if width > 0.0 { smooth(&base, width).unwrap() } else { base };
        let bp = p.breakpoints();
        let v = bp[0] + frac * (bp[bp.len() - 1] - bp[0]);
        prop_assume!(bp.iter().all(|b| (v - b).abs() > 1e-3));
        let r = LogLogRadius { v }.radius();
        prop_assume!(r > 1e-200);
        let h = 1e-6 * r * (-r.ln());
        let fd = (p.rho(r - h) - p.rho(r + h)) / (2.0 * h);
        let g = p.grad(r);
        prop_assume!(g > 0.0);
        prop_assert!((fd - g).abs() / g < 1e-5, "{fd} {g}");
    }

    #[test]
    fn smoothing_keeps_support_and_plateau(s in 1.0f64..10.0, tau in 0.1f64..5.0, width in 0.001f64..0.25) {
        let base = RadialProfile::truncation(s, tau, -3.0, 2);
        let p = smooth(&base, width).unwrap();
        prop_assert!(p.support().v >= base.support().v);
        prop_assert_eq!(p.rho_v(p.plateau().v), base.rho_v(base.plateau().v));
        for i in 0..50 {
            let v = s - 0.5 + (tau + 1.0 + 2.0 * width * tau) * i as f64 / 49.0;
            prop_assert!(p.rho_v(v) <= tau + 1e-15);
            if v <= s { prop_assert_eq!(p.rho_v(v), 0.0); }
        }
    }
}

//! Kernel checks against routes that share no code with the implementation:
//! trigonometric-substitution Simpson rules, the regularized incomplete Beta
//! continued fraction from statrs, and plain Monte Carlo.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;
use wfbm::kernel::*;

/// `B(p, q) = 2 ∫₀^{π/2} sin^{2p-1}θ cos^{2q-1}θ dθ` by composite Simpson.
fn beta_by_simpson(p: f64, q: f64) -> f64 {
    let n = 20_000;
    let h = std::f64::consts::FRAC_PI_2 / n as f64;
    let f = |th: f64| 2.0 * th.sin().powf(2.0 * p - 1.0) * th.cos().powf(2.0 * q - 1.0);
    let mut s = f(0.0) + f(std::f64::consts::FRAC_PI_2);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn beta_against_trig_quadrature() {
    for (p, q) in [(0.5, 0.5), (2.0, 3.0), (1.0, 1.5), (1.5, 2.5)] {
        let oracle = beta_by_simpson(p, q);
        let got = beta_complete(p, q).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle, "B({p},{q}) = {got}, oracle {oracle}");
    }
    // a = 0, b = 0.5: B(1, 1.5) = 2/3 and kappa = 1.
    let p = validate_params(0.0, 0.5).unwrap();
    assert!((beta_by_simpson(1.0, 1.5) - 2.0 / 3.0).abs() < 1e-12);
    assert!((p.kappa() - 1.0).abs() < 1e-13);
}

#[test]
fn weighted_beta_against_incomplete_beta() {
    for (a, b) in [(-0.3, -0.4), (-0.8, 0.5), (0.5, -0.3), (1.7, 0.2), (-0.95, -0.9)] {
        let full = beta_complete(a + 1.0, b + 1.0).unwrap();
        for k in 0..=40 {
            let x = k as f64 / 40.0;
            let oracle = beta_reg(a + 1.0, b + 1.0, x) * full;
            let got = weighted_beta_integral(x, a, b).unwrap();
            assert!(
                (got - oracle).abs() <= 1e-10 * oracle.abs() + 1e-14,
                "G({x}; {a}, {b}) = {got}, oracle {oracle}"
            );
        }
        let g1 = weighted_beta_integral(1.0, a, b).unwrap();
        assert!((g1 - full).abs() < 1e-10 * full, "G(1) {g1} vs B {full}");
    }
}

#[test]
fn self_similarity_on_grid() {
    for (a, b) in [(-0.3, -0.4), (0.5, -0.3), (0.0, 0.0), (0.7, 0.6)] {
        let p = validate_params(a, b).unwrap();
        let h = p.exponent();
        for c in [0.37, 2.5] {
            for i in 1..=20 {
                for j in 1..=20 {
                    let (t, s) = (0.1 * i as f64, 0.1 * j as f64);
                    let r = covariance(&p, t, s).unwrap();
                    let rc = covariance(&p, c * t, c * s).unwrap();
                    let want = c.powf(h) * r;
                    assert!((rc - want).abs() <= 1e-9 * want.abs(), "({a},{b}) c={c} t={t} s={s}");
                }
            }
        }
    }
}

#[test]
fn nonnegativity_scan() {
    for (a, b) in [(-0.3, -0.4), (0.5, -0.3), (-0.6, 0.3), (2.0, 0.9)] {
        let p = validate_params(a, b).unwrap();
        for i in 1..=40 {
            for j in 1..=40 {
                let (t, s) = (0.05 * i as f64, 0.05 * j as f64);
                assert!(increment_variance(&p, t, s).unwrap() >= -1e-12);
                assert!(rho_squared(&p, t, s).unwrap() >= 0.0);
            }
        }
    }
}

#[test]
fn weighted_local_time_expectation_against_monte_carlo() {
    // E𝓛(x, t) = t^{1+a+b} E[φ(x; V)] with V uniform on (0, t^{1+a+b}).
    let p = validate_params(-0.3, -0.4).unwrap();
    let (t, x) = (1.0, 0.5);
    let top = p.variance(t);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v: f64 = top * (1.0 - rng.random::<f64>());
        let y = top * gaussian_density(x, v);
        s += y;
        s2 += y * y;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
    let exact = expected_weighted_local_time(&p, t, x).unwrap();
    assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se}, quadrature {exact}");
}

#[test]
fn abs_deviation_against_quadrature() {
    let bm = validate_params(0.0, 0.0).unwrap();
    let q = gaussian_expectation(|x| x.abs(), 1.0, &[0.0]).unwrap();
    assert!((expected_abs_deviation(&bm, 1.0, 0.0).unwrap() - q).abs() < 1e-12);
    assert!((q - 0.797_884_560_802_865_4).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_symmetric(a in -0.9f64..2.0, bf in -0.99f64..0.99, t in 0.001f64..5.0, s in 0.001f64..5.0) {
        let b = bf * (1.0f64).min(1.0 + a);
        let p = validate_params(a, b).unwrap();
        prop_assert_eq!(covariance(&p, t, s).unwrap(), covariance(&p, s, t).unwrap());
        let d = covariance(&p, t, t).unwrap();
        prop_assert!((d - t.powf(p.exponent())).abs() <= 1e-9 * d);
    }

    #[test]
    fn weighted_beta_monotone(a in -0.95f64..2.0, b in -0.95f64..2.0, x in 0.0f64..1.0, dx in 0.0f64..0.2) {
        let y = (x + dx).min(1.0);
        let gx = weighted_beta_integral(x, a, b).unwrap();
        let gy = weighted_beta_integral(y, a, b).unwrap();
        prop_assert!(gy >= gx - 1e-14 * gy.abs());
    }
}

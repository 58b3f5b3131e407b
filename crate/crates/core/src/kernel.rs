//! Analytic layer: parameter validation, Beta-type integrals, the
//! covariance kernel of the weighted fractional Brownian motion and the
//! closed-form expectations used as oracles elsewhere.
//!
//! The covariance is
//!
//! ```text
//! R(t, s) = 1 / (2 B(a+1, b+1)) ∫₀^{s∧t} u^a ((t-u)^b + (s-u)^b) du
//! ```
//!
//! and is never integrated as written. With `t ≥ s` the two pieces reduce
//! to `t^{1+a+b} G(s/t; a, b)` and `s^{1+a+b} B(a+1, b+1)`, where
//! `G(x; a, b) = ∫₀ˣ u^a (1-u)^b du` is evaluated by
//! [`weighted_beta_integral`] by a binomial series.

use std::f64::consts::{FRAC_2_PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Result, WfbmError};
use crate::quadrature;

const MAX_SERIES_TERMS: usize = 4000;

/// Explicit numerical tolerances, each with a documented default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Accuracy required of kernel evaluations (relative).
    pub kernel: f64,
    /// Accuracy of analytic-oracle comparisons (relative).
    pub oracle: f64,
    /// Maximum |z| for a Monte Carlo verdict.
    pub z_max: f64,
    /// Maximum relative error for a Monte Carlo verdict.
    pub rel_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { kernel: 1e-10, oracle: 1e-6, z_max: 4.0, rel_max: 0.05 }
    }
}

/// A validated `(a, b)` pair together with its derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessParams {
    a: f64,
    b: f64,
    beta: f64,
    kappa: f64,
}

/// Which regime conditions hold for a parameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeFlags {
    /// `-1 < b < 0`: existence of the generalized covariation on the 𝓗 class.
    pub qcov_regime: bool,
    /// `-1 < a + b < 3`: joint continuity of the local time.
    pub localtime_regime: bool,
}

/// Validates `(a, b)` against `a > -1`, `|b| < 1`, `|b| < 1 + a`.
pub fn validate_params(a: f64, b: f64) -> Result<ProcessParams> {
    let fail = |violated| Err(WfbmError::ParamOutOfRegion { a, b, violated });
    if !a.is_finite() || !b.is_finite() {
        return fail("a and b must be finite");
    }
    if a <= -1.0 {
        return fail("a > -1");
    }
    if b.abs() >= 1.0 {
        return fail("|b| < 1");
    }
    if b.abs() >= 1.0 + a {
        return fail("|b| < 1 + a");
    }
    let beta = beta_complete(a + 1.0, b + 1.0)?;
    let kappa = 1.0 / ((1.0 + b) * beta);
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(WfbmError::Domain(format!("kappa not finite for a = {a}, b = {b}")));
    }
    Ok(ProcessParams { a, b, beta, kappa })
}

impl ProcessParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        validate_params(a, b)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `B(a+1, b+1)`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `κ = 1 / ((1+b) B(a+1, b+1))`; equals 1 when `a = 0`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Self-similarity index `(1+a+b)/2`.
    pub fn hurst_like(&self) -> f64 {
        0.5 * self.exponent()
    }

    /// Variance exponent `1+a+b`, so that `Var B_t = t^{1+a+b}`.
    pub fn exponent(&self) -> f64 {
        1.0 + self.a + self.b
    }

    pub fn regime(&self) -> RegimeFlags {
        RegimeFlags {
            qcov_regime: self.b > -1.0 && self.b < 0.0,
            localtime_regime: self.a + self.b > -1.0 && self.a + self.b < 3.0,
        }
    }

    /// `Var B_t = t^{1+a+b}`.
    pub fn variance(&self, t: f64) -> f64 {
        t.powf(self.exponent())
    }
}

/// Complete Beta function `B(p, q)`.
pub fn beta_complete(p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0 && q > 0.0) || !p.is_finite() || !q.is_finite() {
        return Err(WfbmError::Domain(format!("beta requires p, q > 0 (got {p}, {q})")));
    }
    if p + q < 150.0 {
        Ok(gamma(p) * gamma(q) / gamma(p + q))
    } else {
        Ok((ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)).exp())
    }
}

/// `∫₀^y u^a (1-u)^b du` for `0 ≤ y ≤ 1/2`, from the binomial series of
/// `(1-u)^b`. Terms shrink at least like `2^{-k}` times a polynomial in `k`.
fn lower_piece(y: f64, a: f64, b: f64) -> Result<f64> {
    if y <= 0.0 {
        return Ok(0.0);
    }
    let mut coef = 1.0;
    let mut yk = 1.0;
    let mut sum = 0.0;
    for k in 0..MAX_SERIES_TERMS {
        let kf = k as f64;
        let term = coef * yk / (a + 1.0 + kf);
        sum += term;
        if term.abs() <= f64::EPSILON * 0.25 * sum.abs() && kf > b.abs() + 1.0 {
            return Ok(y.powf(a + 1.0) * sum);
        }
        coef *= (kf - b) / (kf + 1.0);
        yk *= y;
        if coef == 0.0 {
            return Ok(y.powf(a + 1.0) * sum);
        }
    }
    Err(WfbmError::Quadrature(format!("beta series did not converge at y = {y}, a = {a}, b = {b}")))
}

/// `G(x; a, b) = ∫₀ˣ u^a (1-u)^b du` for `x ∈ [0, 1]`, `a, b > -1`.
///
/// Above 1/2 the reflection `G(x; a, b) = B(a+1, b+1) - G(1-x; b, a)` keeps
/// the series argument at most 1/2.
pub fn weighted_beta_integral(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(WfbmError::Domain(format!("weighted beta integral needs x in [0,1], got {x}")));
    }
    if !(a > -1.0 && b > -1.0) {
        return Err(WfbmError::Domain(format!("weighted beta integral needs a, b > -1 (got {a}, {b})")));
    }
    if x <= 0.5 {
        return lower_piece(x, a, b);
    }
    Ok(beta_complete(a + 1.0, b + 1.0)? - lower_piece(1.0 - x, b, a)?)
}

fn check_time(t: f64, name: &str) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(WfbmError::Domain(format!("{name} must be a finite time >= 0 (got {t})")));
    }
    Ok(())
}

/// The covariance `R(t, s) = E[B_t B_s]`. Symmetric by construction.
pub fn covariance(p: &ProcessParams, t: f64, s: f64) -> Result<f64> {
    check_time(t, "t")?;
    check_time(s, "s")?;
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if lo == 0.0 {
        return Ok(0.0);
    }
    let h = p.exponent();
    let g = weighted_beta_integral(lo / hi, p.a, p.b)?;
    Ok((hi.powf(h) * g + lo.powf(h) * p.beta) / (2.0 * p.beta))
}

/// `Q(t, s) = E[(B_t - B_s)^2]`, computed from the upper tail
/// `∫_{s/t}^1 v^a (1-v)^b dv` so that nearby times do not cancel.
pub fn increment_variance(p: &ProcessParams, t: f64, s: f64) -> Result<f64> {
    check_time(t, "t")?;
    check_time(s, "s")?;
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if hi == lo {
        return Ok(0.0);
    }
    let h = p.exponent();
    if lo == 0.0 {
        return Ok(hi.powf(h));
    }
    let tail = weighted_beta_integral((hi - lo) / hi, p.b, p.a)?;
    Ok(hi.powf(h) * tail / p.beta)
}

/// `ρ²(t, s) = (ts)^{1+a+b} - R(t, s)²`, the determinant of the covariance
/// of `(B_t, B_s)`.
///
/// Factored as `(σ_tσ_s - μ)(σ_tσ_s + μ)` with
/// `σ_tσ_s - μ = (Q - (σ_t - σ_s)²)/2`, which is free of cancellation.
pub fn rho_squared(p: &ProcessParams, t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && s > 0.0) {
        return Err(WfbmError::Domain(format!("rho_squared needs t, s > 0 (got {t}, {s})")));
    }
    let h = p.exponent();
    let st = t.powf(0.5 * h);
    let ss = s.powf(0.5 * h);
    let mu = covariance(p, t, s)?;
    let q = increment_variance(p, t, s)?;
    let gap = 0.5 * (q - (st - ss) * (st - ss));
    Ok((gap * (st * ss + mu)).max(0.0))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Density of `N(0, var)` at `x`.
pub fn gaussian_density(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `E|B_t - x|` for `B_t ~ N(0, t^{1+a+b})`.
pub fn expected_abs_deviation(p: &ProcessParams, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(WfbmError::Domain(format!("expected_abs_deviation needs t > 0 (got {t})")));
    }
    let sigma = t.powf(0.5 * p.exponent());
    let z = x / sigma;
    Ok(sigma * FRAC_2_PI.sqrt() * (-0.5 * z * z).exp() + x * (1.0 - 2.0 * normal_cdf(-z)))
}

/// `E[𝓛(x, t)] = (1+a+b) ∫₀ᵗ φ(x; s^{1+a+b}) s^{a+b} ds`.
///
/// With `v = s^{(1+a+b)/2}` the integral becomes
/// `√(2/π) ∫₀^{σ_t} exp(-x²/(2v²)) dv`, which is smooth on the whole range.
pub fn expected_weighted_local_time(p: &ProcessParams, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(WfbmError::Domain(format!("expected_weighted_local_time needs t > 0 (got {t})")));
    }
    if !p.regime().localtime_regime {
        return Err(WfbmError::Regime(format!(
            "local time requires -1 < a+b < 3 (a+b = {})",
            p.a + p.b
        )));
    }
    let sigma = t.powf(0.5 * p.exponent());
    if x == 0.0 {
        return Ok(FRAC_2_PI.sqrt() * sigma);
    }
    let x2 = x * x;
    let r = quadrature::integrate(|v| if v > 0.0 { (-0.5 * x2 / (v * v)).exp() } else { 0.0 }, 0.0, sigma, 1e-15, 1e-13)?;
    Ok(FRAC_2_PI.sqrt() * r.value)
}

/// `E[g(σZ)]` for standard normal `Z`, by adaptive quadrature on
/// `[-zmax, zmax]` split at the given breakpoints (in x units).
pub fn gaussian_expectation<F: Fn(f64) -> f64>(g: F, sigma: f64, breaks: &[f64]) -> Result<f64> {
    const ZMAX: f64 = 12.0;
    let mut pts = vec![-ZMAX, ZMAX];
    pts.extend(breaks.iter().map(|x| x / sigma).filter(|z| z.abs() < ZMAX));
    pts.push(0.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let inv = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    quadrature::integrate_pieces(|z| g(sigma * z) * (-0.5 * z * z).exp() * inv, &pts, 1e-14, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn region_checks() {
        let p = validate_params(-0.3, -0.4).unwrap();
        assert!(p.regime().qcov_regime);
        assert!(p.regime().localtime_regime);
        match validate_params(-0.5, 0.6) {
            Err(WfbmError::ParamOutOfRegion { violated, .. }) => assert_eq!(violated, "|b| < 1 + a"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_params(-1.0, 0.0).is_err());
        assert!(validate_params(0.5, 1.0).is_err());
        assert!(validate_params(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn kappa_is_one_at_a_zero() {
        for b in [-0.7, -0.2, 0.0, 0.5, 0.9] {
            let p = validate_params(0.0, b).unwrap();
            assert!((p.kappa() - 1.0).abs() < 1e-13, "b = {b}: {}", p.kappa());
        }
    }

    #[test]
    fn beta_values() {
        assert!((beta_complete(1.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(rel(beta_complete(0.5, 0.5).unwrap(), PI) < 1e-12);
        assert!(rel(beta_complete(2.0, 3.0).unwrap(), 1.0 / 12.0) < 1e-12);
        assert!(beta_complete(0.0, 1.0).is_err());
        assert!(beta_complete(1.0, -0.2).is_err());
    }

    #[test]
    fn weighted_beta_closed_forms() {
        assert!((weighted_beta_integral(0.5, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-14);
        let full = weighted_beta_integral(1.0, -0.3, -0.4).unwrap();
        assert!(rel(full, beta_complete(0.7, 0.6).unwrap()) < 1e-10);
        for b in [-0.6, -0.1, 0.4] {
            for k in 0..=20 {
                let x = k as f64 / 20.0;
                let exact = (1.0 - (1.0 - x).powf(1.0 + b)) / (1.0 + b);
                let got = weighted_beta_integral(x, 0.0, b).unwrap();
                assert!((got - exact).abs() <= 1e-10 * exact.max(1e-300) + 1e-15, "x={x} b={b}");
            }
        }
        assert!(weighted_beta_integral(1.5, 0.0, 0.0).is_err());
        assert!(weighted_beta_integral(0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn covariance_special_cases() {
        let p = validate_params(-0.3, -0.4).unwrap();
        for t in [0.01, 0.3, 1.0, 1.7] {
            assert!(rel(covariance(&p, t, t).unwrap(), t.powf(0.3)) < 1e-9);
        }
        let fbm = validate_params(0.0, -0.4).unwrap();
        let (t, s): (f64, f64) = (1.3, 0.4);
        let h = 0.6;
        let want = 0.5 * (t.powf(h) + s.powf(h) - (t - s).powf(h));
        assert!(rel(covariance(&fbm, t, s).unwrap(), want) < 1e-9);
        let indep = validate_params(0.4, 0.0).unwrap();
        assert!(rel(covariance(&indep, 0.9, 0.35).unwrap(), 0.35f64.powf(1.4)) < 1e-9);
        assert!(covariance(&p, -1.0, 1.0).is_err());
        assert_eq!(covariance(&p, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn increment_variance_matches_covariance_route() {
        let p = validate_params(-0.3, -0.4).unwrap();
        for (t, s) in [(1.0, 0.5), (2.0, 0.05), (0.7, 0.69)] {
            let q = increment_variance(&p, t, s).unwrap();
            let via_r = covariance(&p, t, t).unwrap() + covariance(&p, s, s).unwrap()
                - 2.0 * covariance(&p, t, s).unwrap();
            assert!((q - via_r).abs() < 1e-10, "{t},{s}: {q} vs {via_r}");
        }
        assert_eq!(increment_variance(&p, 0.4, 0.4).unwrap(), 0.0);
        assert!(rel(increment_variance(&p, 0.8, 0.0).unwrap(), 0.8f64.powf(0.3)) < 1e-12);
        let fbm = validate_params(0.0, -0.4).unwrap();
        assert!(rel(increment_variance(&fbm, 1.2, 0.7).unwrap(), 0.5f64.powf(0.6)) < 1e-10);
    }

    #[test]
    fn rho_squared_cases() {
        let bm = validate_params(0.0, 0.0).unwrap();
        assert!((rho_squared(&bm, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-10);
        let p = validate_params(-0.3, -0.4).unwrap();
        assert_eq!(rho_squared(&p, 0.7, 0.7).unwrap(), 0.0);
        assert!(rho_squared(&p, 2.0, 1.0).unwrap() > 0.0);
        assert!(rho_squared(&p, 0.0, 1.0).is_err());
        let (t, s): (f64, f64) = (1.4, 0.6);
        let direct = (t * s).powf(0.3) - covariance(&p, t, s).unwrap().powi(2);
        assert!((rho_squared(&p, t, s).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn abs_deviation() {
        let bm = validate_params(0.0, 0.0).unwrap();
        assert!((expected_abs_deviation(&bm, 1.0, 0.0).unwrap() - (2.0 / PI).sqrt()).abs() < 1e-15);
        let p = validate_params(-0.3, -0.4).unwrap();
        let t: f64 = 2.0;
        let sigma = t.powf(0.15);
        assert!(rel(expected_abs_deviation(&p, t, 0.0).unwrap(), (2.0 / PI).sqrt() * sigma) < 1e-14);
        let x = 10.0 * sigma;
        assert!(rel(expected_abs_deviation(&p, t, x).unwrap(), x) < 1e-6);
        assert!(expected_abs_deviation(&p, 0.0, 1.0).is_err());
    }

    #[test]
    fn local_time_expectation_is_even_and_matches_tanaka() {
        let p = validate_params(-0.3, -0.4).unwrap();
        let at0 = expected_weighted_local_time(&p, 1.0, 0.0).unwrap();
        assert!((at0 - expected_abs_deviation(&p, 1.0, 0.0).unwrap()).abs() < 1e-8);
        for x in [0.1, 0.5, 1.7] {
            let l = expected_weighted_local_time(&p, 1.3, x).unwrap();
            let m = expected_weighted_local_time(&p, 1.3, -x).unwrap();
            assert_eq!(l, m);
            let tanaka = expected_abs_deviation(&p, 1.3, x).unwrap() - x.abs();
            assert!((l - tanaka).abs() < 1e-10, "x={x}: {l} vs {tanaka}");
        }
        let wild = validate_params(3.5, 0.5).unwrap();
        assert!(matches!(expected_weighted_local_time(&wild, 1.0, 0.0), Err(WfbmError::Regime(_))));
    }
}

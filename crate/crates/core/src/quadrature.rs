//! One-dimensional quadrature: a globally adaptive 21-point Gauss-Kronrod
//! integrator and a fixed composite Gauss-Legendre rule.

use crate::error::{Result, WfbmError};

// 21-point Kronrod abscissae; odd indices are the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_745_258_871,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

fn gk21<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Panel {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut res_abs = kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Panel { lo, hi, value, err }
}

/// Globally adaptive Gauss-Kronrod integration of `f` over `[lo, hi]`.
///
/// Bisects the panel with the largest error estimate until the total error
/// falls below `max(abs_tol, rel_tol * |I|)` or `max_panels` is reached.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Integral> {
    integrate_with(f, lo, hi, abs_tol, rel_tol, 2000)
}

pub fn integrate_with<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<Integral> {
    if lo == hi {
        return Ok(Integral { value: 0.0, abs_error: 0.0, intervals: 0 });
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(WfbmError::Domain(format!("non-finite integration bounds [{lo}, {hi}]")));
    }
    let mut panels = vec![gk21(&f, lo, hi)];
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !value.is_finite() {
            return Err(WfbmError::Quadrature(format!("non-finite integral on [{lo}, {hi}]")));
        }
        let tol = abs_tol.max(rel_tol * value.abs());
        if err <= tol {
            return Ok(Integral { value, abs_error: err, intervals: panels.len() });
        }
        if panels.len() >= max_panels {
            // Round-off floor: the error estimate can no longer shrink.
            if err <= 1e3 * tol {
                return Ok(Integral { value, abs_error: err, intervals: panels.len() });
            }
            return Err(WfbmError::Quadrature(format!(
                "no convergence on [{lo}, {hi}]: value {value:e}, error {err:e}, tol {tol:e}"
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .expect("non-empty panel list");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo || mid >= p.hi {
            return Ok(Integral { value, abs_error: err, intervals: panels.len() + 1 });
        }
        panels.push(gk21(&f, p.lo, mid));
        panels.push(gk21(&f, mid, p.hi));
    }
}

/// Integrates over consecutive segments `[points[i], points[i+1]]` and sums.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    for w in points.windows(2) {
        if w[1] > w[0] {
            total += integrate(&f, w[0], w[1], abs_tol / pieces, rel_tol)?.value;
        }
    }
    Ok(total)
}

/// Fixed composite 10-point Gauss-Legendre rule with `panels` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = lo + k as f64 * width;
        let center = a + 0.5 * width;
        let half = 0.5 * width;
        let mut s = 0.0;
        for (i, w) in WG.iter().enumerate() {
            let x = half * XGK[2 * i + 1];
            s += w * (f(center - x) + f(center + x));
        }
        total += s * half;
    }
    total
}

/// Nodes and weights of the composite rule, for tensor-product use.
pub fn gauss_legendre_nodes(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let panels = panels.max(1);
    let width = (hi - lo) / panels as f64;
    let half = 0.5 * width;
    let mut out = Vec::with_capacity(panels * 10);
    for k in 0..panels {
        let center = lo + (k as f64 + 0.5) * width;
        for (i, w) in WG.iter().enumerate() {
            let x = half * XGK[2 * i + 1];
            out.push((center - x, w * half));
            out.push((center + x, w * half));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((r.value - 0.0).abs() < 1e-13);
        let g = gauss_legendre(|x| x.powi(7), 0.0, 1.0, 1);
        assert!((g - 0.125).abs() < 1e-15);
    }

    #[test]
    fn endpoint_singularity_converges() {
        // ∫₀¹ x^{-1/2} dx = 2
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12, 1e-12).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn oscillatory() {
        let r = integrate(|x| x.sin(), 0.0, PI, 1e-14, 1e-14).unwrap();
        assert!((r.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn nodes_match_rule() {
        let nodes = gauss_legendre_nodes(-1.0, 3.0, 4);
        let s: f64 = nodes.iter().map(|(x, w)| w * x.exp()).sum();
        let direct = gauss_legendre(f64::exp, -1.0, 3.0, 4);
        assert!((s - direct).abs() < 1e-12);
        assert!((s - (3f64.exp() - (-1f64).exp())).abs() < 1e-10);
    }
}

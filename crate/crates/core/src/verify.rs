//! Monte Carlo harnesses that check the stochastic-calculus identities
//! against analytic targets, one [`EstimateReport`] per setting.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Result, WfbmError};
use crate::estimators::{
    default_bandwidth, default_x_grid, h_norm, map_path_fields, qcov_ensemble, stieltjes_against_local_time,
    weighted_time_integral_ensemble, EstimatorConfig, QuadRule,
};
use crate::functions::TestFunction;
use crate::inequality_lab::bump_family;
use crate::kernel::{
    expected_abs_deviation, expected_weighted_local_time, gaussian_expectation, increment_variance, normal_cdf,
    ProcessParams,
    Tolerances,
};
use crate::quadrature;
use crate::sampler::{build_grid, GaussianSampler, PathEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdentityId {
    Qvar,
    Chain,
    Ito,
    BouleauYor,
    Tanaka,
    Hnorm,
}

impl IdentityId {
    pub const ALL: [IdentityId; 6] = [
        IdentityId::Qvar,
        IdentityId::Chain,
        IdentityId::Ito,
        IdentityId::BouleauYor,
        IdentityId::Tanaka,
        IdentityId::Hnorm,
    ];
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdentityId::Qvar => "qvar",
            IdentityId::Chain => "chain",
            IdentityId::Ito => "ito",
            IdentityId::BouleauYor => "bouleau-yor",
            IdentityId::Tanaka => "tanaka",
            IdentityId::Hnorm => "hnorm",
        })
    }
}

impl FromStr for IdentityId {
    type Err = WfbmError;

    fn from_str(s: &str) -> Result<Self> {
        IdentityId::ALL
            .iter()
            .copied()
            .find(|i| i.to_string() == s.trim())
            .ok_or_else(|| WfbmError::Config(format!("unknown identity {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

/// One Monte Carlo comparison.
///
/// The default rule is `|z| ≤ z_max` and `rel_err ≤ rel_max`, with
/// `rel_err = |mc_mean - target| / max(|target|, scale)`. Harnesses whose
/// comparison is not a plain mean-versus-target test document their own
/// rule, which is recorded in `rule`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub identity: IdentityId,
    /// Identity plus the function or level, e.g. `chain[x^3]`.
    pub label: String,
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub epsilon: Option<f64>,
    pub n_paths: usize,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub target: f64,
    pub z: f64,
    pub rel_err: f64,
    pub verdict: Verdict,
    pub rule: &'static str,
    /// Named auxiliary numbers (L² error, bias budgets, window expectations).
    pub diagnostics: Vec<(String, f64)>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn diagnostic(&self, name: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

pub const REPORT_HEADER: &str = "identity,a,b,t,epsilon,n_paths,mc_mean,mc_stderr,target,z,rel_err,verdict";

/// One CSV row per report, with diagnostics as trailing comment lines.
pub fn write_reports_csv<W: Write>(mut w: W, preamble: &str, reports: &[EstimateReport]) -> Result<()> {
    w.write_all(preamble.as_bytes())?;
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
            r.label, r.a, r.b, r.t, eps, r.n_paths, r.mc_mean, r.mc_stderr, r.target, r.z, r.rel_err, r.verdict
        )?;
    }
    for r in reports {
        let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
        let diags: Vec<String> = r.diagnostics.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        writeln!(w, "# {} eps={} rule=\"{}\" {}", r.label, eps, r.rule, diags.join(" "))?;
    }
    Ok(())
}

/// Mean and standard error with a fixed summation order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// True when the sequence decreases with at most `allowed` inversions.
pub fn decreasing_with_inversions(xs: &[f64], allowed: usize) -> bool {
    xs.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Path grid spacing Δ.
    pub step: f64,
    pub quad_rule: QuadRule,
    pub tolerances: Tolerances,
    /// Local-time bandwidth; the estimator default when `None`.
    pub bandwidth: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { step: 1.0 / 1024.0, quad_rule: QuadRule::LeftRiemann, tolerances: Tolerances::default(), bandwidth: None }
    }
}

/// The Monte Carlo ensemble a harness runs on: grid `(0, t + 2·max ε]`.
pub fn harness_ensemble(
    p: &ProcessParams,
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<PathEnsemble> {
    if n_paths < 2 {
        return Err(WfbmError::Config("Monte Carlo harnesses need n_paths >= 2".into()));
    }
    let pad = 2.0 * eps_ladder.iter().cloned().fold(0.0, f64::max);
    let grid = build_grid(t, opts.step, pad)?;
    GaussianSampler::new(p, &grid)?.sample(n_paths, seed)
}

fn check_ladder(eps_ladder: &[f64]) -> Result<()> {
    if eps_ladder.is_empty() {
        return Err(WfbmError::Config("epsilon ladder is empty".into()));
    }
    if eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(WfbmError::Config("epsilon ladder entries must be > 0".into()));
    }
    Ok(())
}

/// The estimators accept `b ≤ 0` so that the Brownian case `(0, 0)` can be
/// run as a sanity check alongside the `-1 < b < 0` regime.
fn require_nonpositive_b(p: &ProcessParams, what: &str) -> Result<()> {
    if p.b() > 0.0 {
        return Err(WfbmError::Regime(format!("{what} requires -1 < b <= 0 (b = {})", p.b())));
    }
    Ok(())
}

/// `∫₀^{t^{1+a+b}} E[g(√v Z)] dv = E ∫₀ᵗ g(B_s) d(s^{1+a+b})`.
pub fn clock_expectation<G: Fn(f64) -> f64>(p: &ProcessParams, g: G, breaks: &[f64], t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let failure = std::cell::RefCell::new(None);
    let inner = |v: f64| {
        if v <= 0.0 {
            return g(0.0);
        }
        match gaussian_expectation(&g, v.sqrt(), breaks) {
            Ok(m) => m,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let r = quadrature::integrate(inner, 0.0, p.variance(t), 1e-13, 1e-10);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(r?.value)
}

/// Exact expectation of the discretized `X_ε(t)` on a uniform grid, from
/// `E(B_u - B_s)² = Q(u, s)`.
pub fn expected_discrete_qvar(p: &ProcessParams, step: f64, t: f64, eps: f64, rule: QuadRule) -> Result<f64> {
    let ke = (eps / step).round() as usize;
    let kt = (t / step).round() as usize;
    let e = 1.0 + p.b();
    let q = |j: usize| increment_variance(p, (j + ke) as f64 * step, j as f64 * step);
    let mut sum = 0.0;
    for j in ke..ke + kt {
        let w = (((j + 1) as f64 * step).powf(e) - (j as f64 * step).powf(e)) / e;
        let g = match rule {
            QuadRule::LeftRiemann => q(j)?,
            QuadRule::Trapezoid => 0.5 * (q(j)? + q(j + 1)?),
        };
        sum += g * w;
    }
    Ok(p.exponent() / (ke as f64 * step).powf(e) * sum)
}

#[allow(clippy::too_many_arguments)]
fn report(
    identity: IdentityId,
    label: String,
    p: &ProcessParams,
    t: f64,
    epsilon: Option<f64>,
    n_paths: usize,
    (mc_mean, mc_stderr): (f64, f64),
    target: f64,
    scale: f64,
    tol: &Tolerances,
) -> EstimateReport {
    let diff = mc_mean - target;
    let z = if mc_stderr > 0.0 {
        diff / mc_stderr
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let denom = target.abs().max(scale);
    let rel_err = if denom > 0.0 { diff.abs() / denom } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let verdict = if z.abs() <= tol.z_max && rel_err <= tol.rel_max { Verdict::Pass } else { Verdict::Fail };
    EstimateReport {
        identity,
        label,
        a: p.a(),
        b: p.b(),
        t,
        epsilon,
        n_paths,
        mc_mean,
        mc_stderr,
        target,
        z,
        rel_err,
        verdict,
        rule: "|z| <= z_max and rel_err <= rel_max",
        diagnostics: Vec::new(),
    }
}

/// `X_ε(t)` against `κ t^{1+a+b}` for each ε, on one ensemble.
pub fn verify_qvar(
    p: &ProcessParams,
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<Vec<EstimateReport>> {
    check_ladder(eps_ladder)?;
    let ens = harness_ensemble(p, t, eps_ladder, n_paths, seed, opts)?;
    qvar_reports(p, &ens, t, eps_ladder, opts, IdentityId::Qvar, "qvar".into())
}

fn qvar_reports(
    p: &ProcessParams,
    ens: &PathEnsemble,
    t: f64,
    eps_ladder: &[f64],
    opts: &VerifyOptions,
    identity: IdentityId,
    label: String,
) -> Result<Vec<EstimateReport>> {
    let target = p.kappa() * p.variance(t);
    let mut out = Vec::new();
    for &eps in eps_ladder {
        let xs = qcov_ensemble(p, ens, |x| x, t, eps, opts.quad_rule)?;
        let l2 = xs.iter().map(|x| (x - target) * (x - target)).sum::<f64>() / xs.len() as f64;
        let mut r = report(identity, label.clone(), p, t, Some(eps), xs.len(), mean_stderr(&xs), target, 0.0, &opts.tolerances);
        r.diagnostics.push(("l2_error".into(), l2));
        r.diagnostics.push(("expected_estimator".into(), expected_discrete_qvar(p, opts.step, t, eps, opts.quad_rule)?));
        r.diagnostics.push(("window_limit".into(), p.kappa() * (p.variance(t + eps) - p.variance(eps))));
        out.push(r);
    }
    Ok(out)
}

/// Chain rule: `J_ε(f, t)` against `κ ∫₀ᵗ f'(B_s) ds^{1+a+b}`.
///
/// `mc_mean` is the ensemble mean of `J_ε(f, t)` and `target` the analytic
/// expectation of the right side, so `f = identity` reproduces
/// [`verify_qvar`] exactly. The verdict instead uses the pathwise gap
/// `Dᵢ = J_ε(f,t) - κ ∫ f'(B) ds^{1+a+b}`: it passes when `mean|D|`
/// decreases along the ladder (one inversion allowed) and, at this ε,
/// `mean|D| ≤ rel_max · max(|target|, rms J)`.
pub fn verify_chain_rule(
    p: &ProcessParams,
    f: &TestFunction,
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<Vec<EstimateReport>> {
    check_ladder(eps_ladder)?;
    if !f.is_c1() {
        return Err(WfbmError::UnknownFunction(format!("{f} is not C1; the chain rule harness needs a C1 function")));
    }
    let ens = harness_ensemble(p, t, eps_ladder, n_paths, seed, opts)?;
    let label = format!("chain[{f}]");
    if *f == TestFunction::identity() {
        let mut reports = qvar_reports(p, &ens, t, eps_ladder, opts, IdentityId::Chain, label)?;
        let rhs = vec![p.kappa() * p.variance(t); n_paths];
        let gaps: Vec<Vec<f64>> = eps_ladder
            .iter()
            .map(|&eps| {
                let j = qcov_ensemble(p, &ens, |x| x, t, eps, opts.quad_rule)?;
                Ok(j.iter().zip(&rhs).map(|(a, b)| a - b).collect())
            })
            .collect::<Result<_>>()?;
        apply_chain_verdict(&mut reports, &gaps, opts);
        return Ok(reports);
    }
    let kappa = p.kappa();
    let rhs: Vec<f64> = weighted_time_integral_ensemble(p, &ens, |x| f.derivative(x), t, opts.quad_rule)?
        .into_iter()
        .map(|v| kappa * v)
        .collect();
    let breaks = f.breakpoints();
    let target = kappa * clock_expectation(p, |x| f.derivative(x), &breaks, t)?;
    let mut reports = Vec::new();
    let mut gaps = Vec::new();
    for &eps in eps_ladder {
        let j = qcov_ensemble(p, &ens, |x| f.value(x), t, eps, opts.quad_rule)?;
        let rms = (j.iter().map(|v| v * v).sum::<f64>() / j.len() as f64).sqrt();
        let mut r = report(IdentityId::Chain, label.clone(), p, t, Some(eps), n_paths, mean_stderr(&j), target, rms, &opts.tolerances);
        let window = kappa
            * (clock_expectation(p, |x| f.derivative(x), &breaks, t + eps)?
                - clock_expectation(p, |x| f.derivative(x), &breaks, eps)?);
        r.diagnostics.push(("window_limit".into(), window));
        r.diagnostics.push(("rms_j".into(), rms));
        gaps.push(j.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<f64>>());
        reports.push(r);
    }
    apply_chain_verdict(&mut reports, &gaps, opts);
    Ok(reports)
}

fn apply_chain_verdict(reports: &mut [EstimateReport], gaps: &[Vec<f64>], opts: &VerifyOptions) {
    let mean_abs: Vec<f64> = gaps.iter().map(|g| g.iter().map(|d| d.abs()).sum::<f64>() / g.len() as f64).collect();
    let monotone = decreasing_with_inversions(&mean_abs, 1);
    for (r, m) in reports.iter_mut().zip(&mean_abs) {
        r.diagnostics.push(("mean_abs_gap".into(), *m));
        r.diagnostics.push(("gap_ladder_decreasing".into(), if monotone { 1.0 } else { 0.0 }));
    }
    let Some(fin) = finest(reports) else { return };
    let scale = reports[fin].target.abs().max(reports[fin].diagnostic("rms_j").unwrap_or(0.0));
    let pass = monotone && mean_abs[fin] <= opts.tolerances.rel_max * scale;
    stamp_ladder(reports, pass, "ladder: mean|D| decreasing and mean|D| <= rel_max * max(|target|, rms J) at finest eps");
}

/// Index of the smallest ε in a ladder of reports.
fn finest(reports: &[EstimateReport]) -> Option<usize> {
    (0..reports.len()).min_by(|&i, &j| {
        let e = |k: usize| reports[k].epsilon.unwrap_or(f64::INFINITY);
        e(i).total_cmp(&e(j))
    })
}

fn stamp_ladder(reports: &mut [EstimateReport], pass: bool, rule: &'static str) {
    for r in reports {
        r.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        r.rule = rule;
    }
}

/// Itô formula in expectation: `E F(B_t) - F(0)` against
/// `½ κ⁻¹ E J_ε(F', t)`; the divergence integral has mean zero.
pub fn verify_ito_expectation(
    p: &ProcessParams,
    big_f: &TestFunction,
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<Vec<EstimateReport>> {
    check_ladder(eps_ladder)?;
    if !big_f.is_c1() {
        return Err(WfbmError::UnknownFunction(format!("{big_f} is not C1")));
    }
    if let TestFunction::ExpSquare(beta) = big_f {
        if *beta >= 0.25 / p.variance(t) {
            return Err(WfbmError::Domain(format!("{big_f} violates the growth condition beta < T^(-(1+a+b))/4")));
        }
    }
    let ens = harness_ensemble(p, t, eps_ladder, n_paths, seed, opts)?;
    let breaks = big_f.breakpoints();
    let sigma = p.variance(t).sqrt();
    let target = gaussian_expectation(|x| big_f.value(x), sigma, &breaks)? - big_f.value(0.0);
    let half_inv_kappa = 0.5 / p.kappa();
    let mut out = Vec::new();
    for &eps in eps_ladder {
        let j: Vec<f64> = qcov_ensemble(p, &ens, |x| big_f.derivative(x), t, eps, opts.quad_rule)?
            .into_iter()
            .map(|v| half_inv_kappa * v)
            .collect();
        let (m, se) = mean_stderr(&j);
        let scale = big_f.value(0.0).abs().max(sigma * sigma);
        let mut r = report(IdentityId::Ito, format!("ito[{big_f}]"), p, t, Some(eps), n_paths, (m, se), target, scale, &opts.tolerances);
        let window = 0.5
            * (clock_expectation(p, |x| big_f.second_derivative(x), &breaks, t + eps)?
                - clock_expectation(p, |x| big_f.second_derivative(x), &breaks, eps)?);
        r.diagnostics.push(("window_limit".into(), window));
        out.push(r);
    }
    Ok(out)
}

fn field_config(p: &ProcessParams, ens: &PathEnsemble, t: f64, h: f64, rule: QuadRule) -> EstimatorConfig {
    EstimatorConfig {
        epsilon: 2.0 * ens.grid().step(),
        t_eval: vec![t],
        bandwidth: h,
        x_grid: default_x_grid(p, t, h),
        quad_rule: rule,
    }
}

fn bandwidth_for(p: &ProcessParams, ens: &PathEnsemble, opts: &VerifyOptions) -> Result<f64> {
    let h = opts.bandwidth.unwrap_or_else(|| default_bandwidth(p, ens.grid().step(), ens.grid().horizon()));
    if !(h > 0.0) || !h.is_finite() {
        return Err(WfbmError::Config(format!("bandwidth must be > 0 (got {h})")));
    }
    Ok(h)
}

/// Bouleau-Yor: ensemble means of `J_ε(f, t)` and `-κ ∫ f(x) 𝓛(dx, t)`.
///
/// `mc_mean` is the mean of the left side and `target` the Monte Carlo mean
/// of the right side on the same paths; `mc_stderr` is the standard error of
/// the paired difference. The analytic expectation of the right side is
/// reported as `rhs_expected`, and the change of the right side when `h`
/// is halved as `bandwidth_delta`, next to `bandwidth_budget`. One verdict
/// covers the ladder: the relative gap at the finest ε must be within
/// `rel_max`.
pub fn verify_bouleau_yor(
    p: &ProcessParams,
    f: &TestFunction,
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<Vec<EstimateReport>> {
    check_ladder(eps_ladder)?;
    require_nonpositive_b(p, "the Bouleau-Yor harness")?;
    let ens = harness_ensemble(p, t, eps_ladder, n_paths, seed, opts)?;
    let h = bandwidth_for(p, &ens, opts)?;
    let kappa = p.kappa();
    let rhs_at = |h: f64| -> Result<Vec<f64>> {
        let cfg = field_config(p, &ens, t, h, opts.quad_rule);
        map_path_fields(p, &ens, &cfg, |field| Ok(-kappa * stieltjes_against_local_time(|x| f.value(x), field, t)?))
    };
    let rhs = rhs_at(h)?;
    let rhs_half = rhs_at(0.5 * h)?;
    let (rhs_mean, _) = mean_stderr(&rhs);
    let (rhs_half_mean, _) = mean_stderr(&rhs_half);
    let breaks = f.breakpoints();
    let (rhs_expected, lipschitz) = match f {
        TestFunction::Step(x0) => (kappa * expected_weighted_local_time(p, t, *x0)?, 1.0),
        TestFunction::Interval(lo, hi) => (
            kappa * (expected_weighted_local_time(p, t, *lo)? - expected_weighted_local_time(p, t, *hi)?),
            2.0,
        ),
        _ => (
            kappa * clock_expectation(p, |x| f.derivative(x), &breaks, t)?,
            f.lipschitz().unwrap_or(f64::NAN),
        ),
    };
    let budget = 2.0 * h * lipschitz * p.variance(t) * kappa;
    let mut out = Vec::new();
    for &eps in eps_ladder {
        let lhs = qcov_ensemble(p, &ens, |x| f.value(x), t, eps, opts.quad_rule)?;
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let (lhs_mean, _) = mean_stderr(&lhs);
        let (_, diff_se) = mean_stderr(&diff);
        let mut r = report(
            IdentityId::BouleauYor,
            format!("bouleau-yor[{f}]"),
            p,
            t,
            Some(eps),
            n_paths,
            (lhs_mean, diff_se),
            rhs_mean,
            0.0,
            &opts.tolerances,
        );
        let window = match f {
            TestFunction::Step(_) | TestFunction::Interval(..) => f64::NAN,
            _ => {
                kappa
                    * (clock_expectation(p, |x| f.derivative(x), &breaks, t + eps)?
                        - clock_expectation(p, |x| f.derivative(x), &breaks, eps)?)
            }
        };
        r.diagnostics.extend([
            ("bandwidth".to_string(), h),
            ("rhs_expected".to_string(), rhs_expected),
            ("rhs_half_bandwidth".to_string(), rhs_half_mean),
            ("bandwidth_delta".to_string(), (rhs_mean - rhs_half_mean).abs()),
            ("bandwidth_budget".to_string(), budget),
            ("window_limit".to_string(), window),
        ]);
        out.push(r);
    }
    if let Some(fin) = finest(&out) {
        let pass = out[fin].rel_err <= opts.tolerances.rel_max;
        stamp_ladder(&mut out, pass, "ladder: |lhs - rhs| <= rel_max * |rhs| at finest eps");
    }
    Ok(out)
}

/// Tanaka in expectation: `E|B_t - x| - |x|` against the Monte Carlo mean of
/// the box-kernel `𝓛(x, t)`.
///
/// Smoothing `E𝓛(·, t)`, which is 1-Lipschitz, with a box of half-width `h`
/// moves it by at most `h`; that bias budget is added to both tolerances:
/// pass iff `|diff| ≤ z_max·stderr + h` and `|diff| ≤ rel_max·|target| + h`.
pub fn verify_tanaka_expectation(
    p: &ProcessParams,
    x: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<EstimateReport> {
    require_nonpositive_b(p, "the Tanaka harness")?;
    if !x.is_finite() {
        return Err(WfbmError::Domain(format!("level must be finite (got {x})")));
    }
    let ens = harness_ensemble(p, t, &[], n_paths, seed, opts)?;
    let h = bandwidth_for(p, &ens, opts)?;
    let mut cfg = field_config(p, &ens, t, h, opts.quad_rule);
    let reach = cfg.x_grid[cfg.x_grid.len() - 1];
    if x.abs() > reach {
        let dx = h / 8.0;
        let n = ((x.abs() + 8.0 * p.variance(t).sqrt() + 2.0 * h) / dx).ceil() as i64;
        cfg.x_grid = (-n..=n).map(|i| i as f64 * dx).collect();
    }
    let lt = map_path_fields(p, &ens, &cfg, |field| field.weighted_at(x, t))?;
    let (m, se) = mean_stderr(&lt);
    let target = expected_abs_deviation(p, t, x)? - x.abs();
    let tol = &opts.tolerances;
    let mut r = report(IdentityId::Tanaka, format!("tanaka[x={x}]"), p, t, None, n_paths, (m, se), target, 0.0, tol);
    let budget = h;
    let diff = (m - target).abs();
    r.verdict = if diff <= tol.z_max * se + budget && diff <= tol.rel_max * target.abs() + budget {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    r.rule = "|diff| <= z_max*stderr + h and |diff| <= rel_max*|target| + h";
    let smoothed = box_smoothed_local_time(p, t, x, h)?;
    let discrete = expected_discrete_local_time(p, ens.grid(), t, x, h, opts.quad_rule)?;
    r.diagnostics.extend([
        ("bandwidth".to_string(), h),
        ("bandwidth_budget".to_string(), budget),
        ("expected_local_time".to_string(), expected_weighted_local_time(p, t, x)?),
        ("box_smoothed_target".to_string(), smoothed),
        ("expected_estimator".to_string(), discrete),
        ("lhs_abs_deviation".to_string(), expected_abs_deviation(p, t, x)?),
    ]);
    Ok(r)
}

/// `(1/2h) ∫_{x-h}^{x+h} E𝓛(y, t) dy`: the exact mean of the box estimator
/// in the continuous-time limit.
pub fn box_smoothed_local_time(p: &ProcessParams, t: f64, x: f64, h: f64) -> Result<f64> {
    let pts: Vec<f64> = if x - h < 0.0 && x + h > 0.0 { vec![x - h, 0.0, x + h] } else { vec![x - h, x + h] };
    let v = quadrature::integrate_pieces(
        |y| expected_abs_deviation(p, t, y).unwrap_or(f64::NAN) - y.abs(),
        &pts,
        1e-13,
        1e-11,
    )?;
    Ok(v / (2.0 * h))
}

/// Mean of the discretized box estimator at `x`, ignoring the x-lattice:
/// `Σⱼ wⱼ P(|B_{sⱼ} - x| ≤ h)/(2h)` with the cell weights of the configured
/// rule. The cell at the origin sees `B₀ = 0` exactly.
pub fn expected_discrete_local_time(
    p: &ProcessParams,
    grid: &crate::sampler::SimGrid,
    t: f64,
    x: f64,
    h: f64,
    rule: QuadRule,
) -> Result<f64> {
    let k = crate::estimators::time_index(grid, t)?;
    let box_prob = |j: usize| {
        let s = grid.time_at(j);
        if s == 0.0 {
            return if x.abs() <= h { 1.0 } else { 0.0 };
        }
        let sd = p.variance(s).sqrt();
        normal_cdf((x + h) / sd) - normal_cdf((x - h) / sd)
    };
    let e = p.exponent();
    let mut sum = 0.0;
    for j in 0..k {
        let w = grid.time_at(j + 1).powf(e) - grid.time_at(j).powf(e);
        let v = match rule {
            QuadRule::LeftRiemann => box_prob(j),
            QuadRule::Trapezoid => 0.5 * (box_prob(j) + box_prob(j + 1)),
        };
        sum += w * v;
    }
    Ok(sum / (2.0 * h))
}

/// The default 𝓗-norm family: five bumps and the truncated identity.
pub fn hnorm_family() -> Vec<TestFunction> {
    let mut fam = bump_family();
    fam.push(TestFunction::TruncatedIdentity(3.0));
    fam
}

/// Empirical constant of `E|J_ε(f, t)|² ≤ C ‖f‖²_𝓗` over a family.
///
/// For each ε, `mc_mean` is the largest ratio over the family and
/// `mc_stderr` its standard error; `target` is the same maximum at the
/// previous (coarser) ε, so `rel_err` measures stability under refinement.
/// Pass iff the ratio is finite and, past the first rung, `rel_err ≤ 0.2`.
pub fn verify_hnorm_bound(
    p: &ProcessParams,
    family: &[TestFunction],
    t: f64,
    eps_ladder: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<Vec<EstimateReport>> {
    const STABILITY: f64 = 0.2;
    check_ladder(eps_ladder)?;
    require_nonpositive_b(p, "the H-norm bound")?;
    if family.is_empty() {
        return Err(WfbmError::Config("empty function family".into()));
    }
    let norms2 = family
        .iter()
        .map(|f| h_norm(f, t, p).map(|n| n * n))
        .collect::<Result<Vec<f64>>>()?;
    let ens = harness_ensemble(p, t, eps_ladder, n_paths, seed, opts)?;
    let mut out: Vec<EstimateReport> = Vec::new();
    let mut previous: Option<f64> = None;
    for &eps in eps_ladder {
        let mut best = (f64::NEG_INFINITY, 0.0, 0usize);
        for (k, f) in family.iter().enumerate() {
            let j = qcov_ensemble(p, &ens, |x| f.value(x), t, eps, opts.quad_rule)?;
            let sq: Vec<f64> = j.iter().map(|v| v * v / norms2[k]).collect();
            let (m, se) = mean_stderr(&sq);
            if m > best.0 {
                best = (m, se, k);
            }
        }
        let (m, se, k) = best;
        let target = previous.unwrap_or(m);
        let mut r = report(IdentityId::Hnorm, "hnorm".into(), p, t, Some(eps), n_paths, (m, se), target, 0.0, &opts.tolerances);
        r.verdict = if m.is_finite() && r.rel_err <= STABILITY { Verdict::Pass } else { Verdict::Fail };
        r.rule = "max ratio finite and within 20% of the previous rung";
        r.diagnostics.push(("argmax_index".into(), k as f64));
        r.diagnostics.push(("argmax_norm_sq".into(), norms2[k]));
        previous = Some(m);
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::validate_params;

    #[test]
    fn stats_helpers() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(decreasing_with_inversions(&[3.0, 2.0, 2.5, 1.0], 1));
        assert!(!decreasing_with_inversions(&[1.0, 2.0, 3.0], 1));
    }

    #[test]
    fn clock_expectation_closed_forms() {
        let p = validate_params(-0.3, -0.4).unwrap();
        let v = clock_expectation(&p, |x| 3.0 * x * x, &[], 1.0).unwrap();
        assert!((v - 1.5).abs() < 1e-9);
        let v = clock_expectation(&p, |_| 1.0, &[], 2.0).unwrap();
        assert!((v - 2f64.powf(0.3)).abs() < 1e-10);
    }

    #[test]
    fn discrete_qvar_expectation_brownian() {
        // For Brownian motion Q(u, s) = u - s, so every cell contributes ε·Δ/ε.
        let p = validate_params(0.0, 0.0).unwrap();
        let v = expected_discrete_qvar(&p, 1.0 / 256.0, 1.0, 8.0 / 256.0, QuadRule::LeftRiemann).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_smoothing_at_the_cusp() {
        let p = validate_params(0.0, 0.0).unwrap();
        let h = 1e-3;
        let s = box_smoothed_local_time(&p, 1.0, 0.0, h).unwrap();
        let exact = expected_weighted_local_time(&p, 1.0, 0.0).unwrap();
        assert!((exact - s - h / 2.0).abs() < 1e-5, "{s} {exact}");
    }

    #[test]
    fn identity_parse() {
        for i in IdentityId::ALL {
            assert_eq!(i.to_string().parse::<IdentityId>().unwrap(), i);
        }
    }
}

//! Pathwise estimators on sampled trajectories.
//!
//! Time integrals carry the singular weights `s^b` and `s^{a+b}` exactly:
//! each grid cell `[sⱼ, sⱼ₊₁]` gets the weight `∫ s^e ds` in closed form and
//! the path functional is frozen at the left end (or averaged over both ends
//! for the trapezoid rule).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfbmError};
use crate::functions::TestFunction;
use crate::kernel::{gaussian_expectation, ProcessParams};
use crate::quadrature;
use crate::sampler::{Path, PathEnsemble, SimGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadRule {
    #[default]
    LeftRiemann,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    pub t_eval: Vec<f64>,
    pub bandwidth: f64,
    pub x_grid: Vec<f64>,
    pub quad_rule: QuadRule,
}

/// `h = 2·√(Δ^{1+b}·horizon^a)`: two typical increment sizes.
pub fn default_bandwidth(p: &ProcessParams, step: f64, horizon: f64) -> f64 {
    2.0 * (step.powf(1.0 + p.b()) * horizon.powf(p.a())).sqrt()
}

/// Symmetric lattice through 0 with spacing `h/8`, reaching
/// `8·√(t_max^{1+a+b}) + 2h` on each side.
pub fn default_x_grid(p: &ProcessParams, t_max: f64, h: f64) -> Vec<f64> {
    let reach = 8.0 * p.variance(t_max).sqrt() + 2.0 * h;
    let dx = h / 8.0;
    let n = (reach / dx).ceil() as i64;
    (-n..=n).map(|i| i as f64 * dx).collect()
}

impl EstimatorConfig {
    /// Defaults for a grid: bandwidth and x-grid as above, left-Riemann rule.
    pub fn with_defaults(p: &ProcessParams, grid: &SimGrid, epsilon: f64, t_eval: Vec<f64>) -> Self {
        let h = default_bandwidth(p, grid.step(), grid.horizon());
        let t_max = t_eval.iter().cloned().fold(0.0, f64::max).max(grid.step());
        EstimatorConfig {
            epsilon,
            x_grid: default_x_grid(p, t_max, h),
            t_eval,
            bandwidth: h,
            quad_rule: QuadRule::LeftRiemann,
        }
    }

    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        if self.epsilon < 2.0 * grid.step() * (1.0 - 1e-9) {
            return Err(WfbmError::Config(format!(
                "epsilon {} must be at least two grid steps ({})",
                self.epsilon,
                2.0 * grid.step()
            )));
        }
        check_bandwidth(self.bandwidth)?;
        check_x_grid(&self.x_grid)?;
        if self.t_eval.is_empty() {
            return Err(WfbmError::Config("t_eval is empty".into()));
        }
        Ok(())
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(WfbmError::Config(format!("bandwidth must be > 0 (got {h})")));
    }
    Ok(())
}

/// The x-grid must be a uniform lattice; returns its spacing.
fn check_x_grid(x: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(WfbmError::Config("x_grid needs at least 3 points".into()));
    }
    let dx = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if !(dx > 0.0) {
        return Err(WfbmError::Config("x_grid must be strictly increasing".into()));
    }
    for (i, &xi) in x.iter().enumerate() {
        if (xi - (x[0] + i as f64 * dx)).abs() > 1e-9 * dx.max(xi.abs()) {
            return Err(WfbmError::Config("x_grid must be strictly increasing and uniform".into()));
        }
    }
    Ok(dx)
}

/// Grid index `j` with `time_at(j) = t` (index 0 is the origin).
pub fn time_index(grid: &SimGrid, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(WfbmError::Domain(format!("time must be >= 0 (got {t})")));
    }
    if t > grid.horizon() * (1.0 + 1e-12) {
        return Err(WfbmError::InsufficientHorizon { needed: t, available: grid.horizon() });
    }
    if grid.is_uniform() {
        return grid
            .steps_in(t)
            .ok_or_else(|| WfbmError::Grid(format!("t = {t} is not a multiple of the step {}", grid.step())));
    }
    if t == 0.0 {
        return Ok(0);
    }
    grid.times()
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * t)
        .map(|i| i + 1)
        .ok_or_else(|| WfbmError::Grid(format!("t = {t} is not a grid time")))
}

/// `time_at(j)^e` for `j = 0..=M`.
fn grid_powers(grid: &SimGrid, e: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(grid.len() + 1);
    v.push(0.0);
    v.extend(grid.times().iter().map(|s| s.powf(e)));
    v
}

/// `∫₀ᵗ g(B_s) d(s^e)` with exact cell weights.
fn clock_integral<G: Fn(f64) -> f64>(path: &Path<'_>, g: &G, k: usize, pw: &[f64], rule: QuadRule) -> f64 {
    let mut sum = 0.0;
    match rule {
        QuadRule::LeftRiemann => {
            for j in 0..k {
                sum += g(path.at(j)) * (pw[j + 1] - pw[j]);
            }
        }
        QuadRule::Trapezoid => {
            let mut left = g(path.at(0));
            for j in 0..k {
                let right = g(path.at(j + 1));
                sum += 0.5 * (left + right) * (pw[j + 1] - pw[j]);
                left = right;
            }
        }
    }
    sum
}

/// `(1+a+b) ∫₀ᵗ g(B_s) s^{a+b} ds = ∫₀ᵗ g(B_s) d(s^{1+a+b})`.
pub fn weighted_time_integral<G: Fn(f64) -> f64>(
    p: &ProcessParams,
    path: &Path<'_>,
    g: G,
    t: f64,
    rule: QuadRule,
) -> Result<f64> {
    let k = time_index(path.grid(), t)?;
    let pw = grid_powers(path.grid(), p.exponent());
    Ok(clock_integral(path, &g, k, &pw, rule))
}

/// Precomputed index offsets and cell weights for `J_ε` on one grid.
#[derive(Debug, Clone)]
pub struct QcovPlan {
    k_eps: usize,
    k_t: usize,
    weights: Vec<f64>,
    scale: f64,
    rule: QuadRule,
}

impl QcovPlan {
    pub fn new(p: &ProcessParams, grid: &SimGrid, t: f64, eps: f64, rule: QuadRule) -> Result<Self> {
        if !grid.is_uniform() {
            return Err(WfbmError::Grid("the lookahead needs a uniform grid".into()));
        }
        if !(eps > 0.0) {
            return Err(WfbmError::Config(format!("epsilon must be > 0 (got {eps})")));
        }
        let k_eps = grid
            .steps_in(eps)
            .ok_or(WfbmError::MisalignedEpsilon { eps, step: grid.step() })?;
        if k_eps < 2 {
            return Err(WfbmError::Config(format!("epsilon {eps} must be at least two grid steps")));
        }
        if t + 2.0 * eps > grid.horizon() * (1.0 + 1e-12) {
            return Err(WfbmError::InsufficientHorizon { needed: t + 2.0 * eps, available: grid.horizon() });
        }
        let k_t = time_index(grid, t)?;
        let e = 1.0 + p.b();
        let weights = (k_eps..k_eps + k_t)
            .map(|j| (grid.time_at(j + 1).powf(e) - grid.time_at(j).powf(e)) / e)
            .collect();
        let eps_exact = k_eps as f64 * grid.step();
        Ok(QcovPlan { k_eps, k_t, weights, scale: p.exponent() / eps_exact.powf(e), rule })
    }

    /// `J_ε(f, t)` on one path.
    pub fn apply<F: Fn(f64) -> f64>(&self, path: &Path<'_>, f: &F) -> f64 {
        let (ke, kt) = (self.k_eps, self.k_t);
        let integrand = |j: usize| {
            let (x0, x1) = (path.at(j), path.at(j + ke));
            (f(x1) - f(x0)) * (x1 - x0)
        };
        let mut sum = 0.0;
        match self.rule {
            QuadRule::LeftRiemann => {
                for (i, w) in self.weights.iter().enumerate() {
                    sum += integrand(ke + i) * w;
                }
            }
            QuadRule::Trapezoid => {
                let mut left = integrand(ke);
                for (i, w) in self.weights.iter().enumerate() {
                    let right = integrand(ke + i + 1);
                    sum += 0.5 * (left + right) * w;
                    left = right;
                }
            }
        }
        debug_assert_eq!(self.weights.len(), kt);
        self.scale * sum
    }
}

/// The discretized generalized covariation
/// `J_ε(f, t) = (1+a+b)/ε^{1+b} ∫_ε^{t+ε} (f(B_{s+ε}) - f(B_s))(B_{s+ε} - B_s) s^b ds`.
pub fn qcov_estimate<F: Fn(f64) -> f64>(
    p: &ProcessParams,
    path: &Path<'_>,
    f: F,
    t: f64,
    eps: f64,
    rule: QuadRule,
) -> Result<f64> {
    Ok(QcovPlan::new(p, path.grid(), t, eps, rule)?.apply(path, &f))
}

/// `X_ε(t)`, the squared-increment functional; `J_ε` with `f = id`.
pub fn qvar_estimate(p: &ProcessParams, path: &Path<'_>, t: f64, eps: f64, rule: QuadRule) -> Result<f64> {
    qcov_estimate(p, path, |x| x, t, eps, rule)
}

/// `J_ε(f, t)` for every path, in path order.
pub fn qcov_ensemble<F: Fn(f64) -> f64 + Sync>(
    p: &ProcessParams,
    ens: &PathEnsemble,
    f: F,
    t: f64,
    eps: f64,
    rule: QuadRule,
) -> Result<Vec<f64>> {
    let plan = QcovPlan::new(p, ens.grid(), t, eps, rule)?;
    Ok((0..ens.n_paths()).into_par_iter().map(|i| plan.apply(&ens.path(i), &f)).collect())
}

/// `∫₀ᵗ g(B_s) d(s^{1+a+b})` for every path, in path order.
pub fn weighted_time_integral_ensemble<G: Fn(f64) -> f64 + Sync>(
    p: &ProcessParams,
    ens: &PathEnsemble,
    g: G,
    t: f64,
    rule: QuadRule,
) -> Result<Vec<f64>> {
    let k = time_index(ens.grid(), t)?;
    let pw = grid_powers(ens.grid(), p.exponent());
    Ok((0..ens.n_paths()).into_par_iter().map(|i| clock_integral(&ens.path(i), &g, k, &pw, rule)).collect())
}

/// Box-kernel local time on a uniform x-lattice, stored `[t][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    x_grid: Vec<f64>,
    t_eval: Vec<f64>,
    raw: Vec<f64>,
    weighted: Vec<f64>,
    bandwidth: f64,
    n_paths_averaged: usize,
}

impl LocalTimeField {
    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn t_eval(&self) -> &[f64] {
        &self.t_eval
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_paths_averaged(&self) -> usize {
        self.n_paths_averaged
    }

    pub fn dx(&self) -> f64 {
        (self.x_grid[self.x_grid.len() - 1] - self.x_grid[0]) / (self.x_grid.len() - 1) as f64
    }

    fn t_pos(&self, t: f64) -> Result<usize> {
        self.t_eval
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| WfbmError::Domain(format!("t = {t} is not an evaluation time of the field")))
    }

    /// `L(·, t)` on the x-grid.
    pub fn raw(&self, t: f64) -> Result<&[f64]> {
        let k = self.t_pos(t)?;
        let n = self.x_grid.len();
        Ok(&self.raw[k * n..(k + 1) * n])
    }

    /// `𝓛(·, t)` on the x-grid.
    pub fn weighted(&self, t: f64) -> Result<&[f64]> {
        let k = self.t_pos(t)?;
        let n = self.x_grid.len();
        Ok(&self.weighted[k * n..(k + 1) * n])
    }

    /// `𝓛(x, t)` by linear interpolation in x.
    pub fn weighted_at(&self, x: f64, t: f64) -> Result<f64> {
        let col = self.weighted(t)?;
        let (x0, dx) = (self.x_grid[0], self.dx());
        let u = (x - x0) / dx;
        if u < 0.0 || u > (col.len() - 1) as f64 {
            return Ok(0.0);
        }
        let i = (u.floor() as usize).min(col.len() - 2);
        let r = u - i as f64;
        Ok(col[i] * (1.0 - r) + col[i + 1] * r)
    }

    /// `Σₓ field·Δx` for the raw and weighted fields.
    pub fn mass(&self, t: f64) -> Result<(f64, f64)> {
        let dx = self.dx();
        Ok((self.raw(t)?.iter().sum::<f64>() * dx, self.weighted(t)?.iter().sum::<f64>() * dx))
    }

    fn add_assign(&mut self, other: &LocalTimeField) {
        for (a, b) in self.raw.iter_mut().zip(&other.raw) {
            *a += b;
        }
        for (a, b) in self.weighted.iter_mut().zip(&other.weighted) {
            *a += b;
        }
        self.n_paths_averaged += other.n_paths_averaged;
    }

    fn scale(&mut self, c: f64) {
        self.raw.iter_mut().for_each(|v| *v *= c);
        self.weighted.iter_mut().for_each(|v| *v *= c);
    }

    /// CSV rows `x,t,raw,weighted`.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &str) -> Result<()> {
        w.write_all(preamble.as_bytes())?;
        writeln!(w, "x,t,raw,weighted")?;
        let n = self.x_grid.len();
        for (k, t) in self.t_eval.iter().enumerate() {
            for (i, x) in self.x_grid.iter().enumerate() {
                writeln!(w, "{x},{t},{},{}", self.raw[k * n + i], self.weighted[k * n + i])?;
            }
        }
        Ok(())
    }
}

/// Spreads `w` over the lattice cells `[xᵢ - Δx/2, xᵢ + Δx/2]` in proportion
/// to their overlap with `[y - h, y + h]`, so the deposited mass is exactly
/// `w` whenever the box lies inside the lattice.
fn deposit(col: &mut [f64], x0: f64, dx: f64, h: f64, y: f64, w: f64) {
    let n = col.len();
    let lo = y - h;
    let hi = y + h;
    let first = (((lo - x0) / dx) - 0.5).ceil().max(0.0) as usize;
    let last_f = (((hi - x0) / dx) + 0.5).floor();
    if last_f < 0.0 || first >= n {
        return;
    }
    let last = (last_f as usize).min(n - 1);
    let c = w / (2.0 * h * dx);
    for (i, v) in col.iter_mut().enumerate().take(last + 1).skip(first) {
        let cl = x0 + (i as f64 - 0.5) * dx;
        let overlap = (hi.min(cl + dx) - lo.max(cl)).max(0.0);
        *v += c * overlap;
    }
}

struct FieldPlan {
    ks: Vec<usize>,
    pw: Vec<f64>,
    x0: f64,
    dx: f64,
}

fn field_plan(p: &ProcessParams, grid: &SimGrid, cfg: &EstimatorConfig) -> Result<FieldPlan> {
    check_bandwidth(cfg.bandwidth)?;
    let dx = check_x_grid(&cfg.x_grid)?;
    if cfg.t_eval.is_empty() {
        return Err(WfbmError::Config("t_eval is empty".into()));
    }
    if cfg.t_eval.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(WfbmError::Config("t_eval must be strictly increasing".into()));
    }
    if !p.regime().localtime_regime {
        return Err(WfbmError::Regime(format!("local time requires -1 < a+b < 3 (a+b = {})", p.a() + p.b())));
    }
    let ks = cfg.t_eval.iter().map(|&t| time_index(grid, t)).collect::<Result<Vec<_>>>()?;
    Ok(FieldPlan { ks, pw: grid_powers(grid, p.exponent()), x0: cfg.x_grid[0], dx })
}

fn path_field(path: &Path<'_>, cfg: &EstimatorConfig, plan: &FieldPlan) -> LocalTimeField {
    let nx = cfg.x_grid.len();
    let nt = plan.ks.len();
    let mut raw_acc = vec![0.0; nx];
    let mut wt_acc = vec![0.0; nx];
    let mut raw = vec![0.0; nx * nt];
    let mut weighted = vec![0.0; nx * nt];
    let h = cfg.bandwidth;
    let grid = path.grid();
    let mut j = 0;
    for (k, &kt) in plan.ks.iter().enumerate() {
        while j < kt {
            let ds = grid.time_at(j + 1) - grid.time_at(j);
            let dw = plan.pw[j + 1] - plan.pw[j];
            match cfg.quad_rule {
                QuadRule::LeftRiemann => {
                    let y = path.at(j);
                    deposit(&mut raw_acc, plan.x0, plan.dx, h, y, ds);
                    deposit(&mut wt_acc, plan.x0, plan.dx, h, y, dw);
                }
                QuadRule::Trapezoid => {
                    for y in [path.at(j), path.at(j + 1)] {
                        deposit(&mut raw_acc, plan.x0, plan.dx, h, y, 0.5 * ds);
                        deposit(&mut wt_acc, plan.x0, plan.dx, h, y, 0.5 * dw);
                    }
                }
            }
            j += 1;
        }
        raw[k * nx..(k + 1) * nx].copy_from_slice(&raw_acc);
        weighted[k * nx..(k + 1) * nx].copy_from_slice(&wt_acc);
    }
    LocalTimeField {
        x_grid: cfg.x_grid.clone(),
        t_eval: cfg.t_eval.clone(),
        raw,
        weighted,
        bandwidth: h,
        n_paths_averaged: 1,
    }
}

/// Local time of a single path.
pub fn local_time_path(p: &ProcessParams, path: &Path<'_>, cfg: &EstimatorConfig) -> Result<LocalTimeField> {
    let plan = field_plan(p, path.grid(), cfg)?;
    Ok(path_field(path, cfg, &plan))
}

/// Applies `stat` to the local-time field of every path, in path order.
pub fn map_path_fields<T: Send, S: Fn(&LocalTimeField) -> Result<T> + Sync>(
    p: &ProcessParams,
    ens: &PathEnsemble,
    cfg: &EstimatorConfig,
    stat: S,
) -> Result<Vec<T>> {
    let plan = field_plan(p, ens.grid(), cfg)?;
    (0..ens.n_paths())
        .into_par_iter()
        .map(|i| stat(&path_field(&ens.path(i), cfg, &plan)))
        .collect()
}

/// Ensemble-mean local time field. Partial sums are formed over fixed
/// blocks of paths and combined in block order, so the result does not
/// depend on the thread count.
pub fn local_time_field(p: &ProcessParams, ens: &PathEnsemble, cfg: &EstimatorConfig) -> Result<LocalTimeField> {
    const BLOCK: usize = 32;
    let plan = field_plan(p, ens.grid(), cfg)?;
    let n = ens.n_paths();
    let blocks: Vec<LocalTimeField> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = path_field(&ens.path(b * BLOCK), cfg, &plan);
            for i in b * BLOCK + 1..((b + 1) * BLOCK).min(n) {
                acc.add_assign(&path_field(&ens.path(i), cfg, &plan));
            }
            acc
        })
        .collect();
    let mut it = blocks.into_iter();
    let mut total = it.next().expect("at least one path");
    for b in it {
        total.add_assign(&b);
    }
    total.scale(1.0 / n as f64);
    Ok(total)
}

/// Relative threshold below which the field counts as vanished at the edges.
pub const EDGE_TOLERANCE: f64 = 1e-6;

/// `∫ f(x) 𝓛(dx, t) = -Σₓ f̂'(x) 𝓛(x, t) Δx` with `f̂'` the centered
/// difference of `f` on the lattice.
pub fn stieltjes_against_local_time<F: Fn(f64) -> f64>(f: F, field: &LocalTimeField, t: f64) -> Result<f64> {
    let col = field.weighted(t)?;
    let n = col.len();
    let max = col.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    let edge = col[0].max(col[n - 1]);
    if edge >= EDGE_TOLERANCE * max {
        return Err(WfbmError::EdgeMass { edge, max });
    }
    let fx: Vec<f64> = field.x_grid.iter().map(|&x| f(x)).collect();
    let mut sum = 0.0;
    for i in 1..n - 1 {
        sum += 0.5 * (fx[i + 1] - fx[i - 1]) * col[i];
    }
    Ok(-sum)
}

/// Writes `path_id,t,epsilon,estimate` rows.
pub fn write_estimates_csv<W: Write>(mut w: W, preamble: &str, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    w.write_all(preamble.as_bytes())?;
    writeln!(w, "path_id,t,epsilon,estimate")?;
    for (i, t, eps, v) in rows {
        writeln!(w, "{i},{t},{eps},{v}")?;
    }
    Ok(())
}

/// `‖f‖_𝓗` over `[0, T+1]`.
///
/// With `v = s^{1+a+b}` the squared norm is `(1/(1+a+b)) ∫₀^{(T+1)^{1+a+b}} E[f²(√v Z)] dv`,
/// whose integrand is bounded near the origin.
pub fn h_norm(f: &TestFunction, horizon: f64, p: &ProcessParams) -> Result<f64> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(WfbmError::Domain(format!("horizon must be >= 0 (got {horizon})")));
    }
    let vmax = (horizon + 1.0).powf(p.exponent());
    let breaks = f.breakpoints();
    let compact = f.has_compact_support();
    let failure = std::cell::RefCell::new(None::<WfbmError>);
    let inner = |v: f64| -> f64 {
        if v <= 0.0 {
            let y = f.value(0.0);
            return y * y;
        }
        let sigma = v.sqrt();
        let g = |x: f64| {
            let y = f.value(x);
            y * y
        };
        // Compact support rules out divergence; otherwise f² must have
        // died out against the Gaussian weight at the truncation point.
        let tail = if compact {
            0.0
        } else {
            [12.0, -12.0].iter().map(|z| g(sigma * z)).fold(0.0, f64::max) * (-72.0f64).exp() * 12.0
        };
        match gaussian_expectation(g, sigma, &breaks) {
            Ok(m) if tail <= 1e-9 * m.max(1e-300) || tail < 1e-280 => m,
            Ok(m) => {
                failure.borrow_mut().get_or_insert(WfbmError::NormInfinite(format!(
                    "Gaussian tail of f² does not decay at variance {v} (mass {m:e}, tail {tail:e})"
                )));
                0.0
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let r = quadrature::integrate(inner, 0.0, vmax, 1e-15, 1e-11);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let sq = r?.value / p.exponent();
    if !sq.is_finite() {
        return Err(WfbmError::NormInfinite(format!("{f}: non-finite norm")));
    }
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::validate_params;
    use crate::sampler::{build_grid, sample_paths};

    fn setup() -> (ProcessParams, PathEnsemble) {
        let p = validate_params(-0.3, -0.4).unwrap();
        let g = build_grid(1.0, 1.0 / 128.0, 0.25).unwrap();
        (p, sample_paths(&p, &g, 4, 3).unwrap())
    }

    #[test]
    fn constant_integrand_telescopes() {
        let (p, ens) = setup();
        let v = weighted_time_integral(&p, &ens.path(0), |_| 1.0, 1.0, QuadRule::LeftRiemann).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = weighted_time_integral(&p, &ens.path(1), |_| 1.0, 0.5, QuadRule::Trapezoid).unwrap();
        assert!((v - 0.5f64.powf(0.3)).abs() < 1e-12);
        assert!(weighted_time_integral(&p, &ens.path(0), |_| 1.0, 2.0, QuadRule::LeftRiemann).is_err());
    }

    #[test]
    fn qcov_contract_errors() {
        let (p, ens) = setup();
        let path = ens.path(0);
        let step = 1.0 / 128.0;
        assert_eq!(qcov_estimate(&p, &path, |_| 3.0, 1.0, 8.0 * step, QuadRule::LeftRiemann).unwrap(), 0.0);
        assert!(matches!(
            qcov_estimate(&p, &path, |x| x, 1.0, 8.5 * step, QuadRule::LeftRiemann),
            Err(WfbmError::MisalignedEpsilon { .. })
        ));
        assert!(matches!(
            qcov_estimate(&p, &path, |x| x, 1.0, 32.0 * step, QuadRule::LeftRiemann),
            Err(WfbmError::InsufficientHorizon { .. })
        ));
        assert!(qcov_estimate(&p, &path, |x| x, 1.0, step, QuadRule::LeftRiemann).is_err());
    }

    #[test]
    fn qvar_is_qcov_with_identity() {
        let (p, ens) = setup();
        for rule in [QuadRule::LeftRiemann, QuadRule::Trapezoid] {
            let a = qvar_estimate(&p, &ens.path(2), 0.75, 4.0 / 128.0, rule).unwrap();
            let b = qcov_estimate(&p, &ens.path(2), |x| x, 0.75, 4.0 / 128.0, rule).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn deposit_conserves_mass() {
        let x: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.05).collect();
        let mut col = vec![0.0; x.len()];
        for y in [0.0, 0.013, -0.777, 1.2] {
            deposit(&mut col, x[0], 0.05, 0.3, y, 1.0);
        }
        let mass: f64 = col.iter().sum::<f64>() * 0.05;
        assert!((mass - 4.0).abs() < 1e-12, "{mass}");
    }

    #[test]
    fn field_mass_exact_for_one_path() {
        let (p, ens) = setup();
        let cfg = EstimatorConfig::with_defaults(&p, ens.grid(), 4.0 / 128.0, vec![0.5, 1.0]);
        let field = local_time_path(&p, &ens.path(0), &cfg).unwrap();
        for t in [0.5f64, 1.0] {
            let (raw, wt) = field.mass(t).unwrap();
            assert!((raw - t).abs() < 1e-10, "{raw}");
            assert!((wt - t.powf(0.3)).abs() < 1e-10, "{wt}");
        }
        let mut bad = cfg.clone();
        bad.bandwidth = 0.0;
        assert!(local_time_path(&p, &ens.path(0), &bad).is_err());
    }

    #[test]
    fn stieltjes_of_constant_vanishes() {
        let (p, ens) = setup();
        let cfg = EstimatorConfig::with_defaults(&p, ens.grid(), 4.0 / 128.0, vec![1.0]);
        let field = local_time_field(&p, &ens, &cfg).unwrap();
        assert_eq!(stieltjes_against_local_time(|_| 2.5, &field, 1.0).unwrap(), 0.0);
        let narrow = EstimatorConfig { x_grid: vec![-0.05, 0.0, 0.05], ..cfg };
        let field = local_time_field(&p, &ens, &narrow).unwrap();
        assert!(matches!(
            stieltjes_against_local_time(|x| x, &field, 1.0),
            Err(WfbmError::EdgeMass { .. })
        ));
    }

    #[test]
    fn h_norm_closed_forms() {
        let p = validate_params(-0.3, -0.4).unwrap();
        let h = p.exponent();
        let one = h_norm(&TestFunction::Constant(1.0), 1.0, &p).unwrap();
        assert!((one - (2f64.powf(h) / h).sqrt()).abs() < 1e-10);
        let x = h_norm(&TestFunction::identity(), 1.0, &p).unwrap();
        assert!((x - (2f64.powf(2.0 * h) / (2.0 * h)).sqrt()).abs() < 1e-10);
        assert!(matches!(h_norm(&TestFunction::ExpSquare(1.0), 1.0, &p), Err(WfbmError::NormInfinite(_))));
    }
}

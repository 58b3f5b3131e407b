//! Exact Gaussian simulation on a time grid by Cholesky factorization of
//! the Gram matrix.
//!
//! The increments of the process are not stationary, so circulant embedding
//! does not apply; the dense factorization is `O(M³)` and grids are capped at
//! [`MAX_GRID_POINTS`]. `B₀ = 0` is implicit and never stored.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, WfbmError};
use crate::kernel::{covariance, ProcessParams};

pub const MAX_GRID_POINTS: usize = 4096;

/// A strictly increasing grid of positive times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGrid {
    times: Vec<f64>,
    step: f64,
}

/// Uniform grid on `(0, horizon + pad]` with spacing `step`.
pub fn build_grid(horizon: f64, step: f64, pad: f64) -> Result<SimGrid> {
    if !(horizon > 0.0 && step > 0.0) || !horizon.is_finite() || !step.is_finite() {
        return Err(WfbmError::Grid(format!("horizon and step must be positive (got {horizon}, {step})")));
    }
    if !(pad >= 0.0) || !pad.is_finite() {
        return Err(WfbmError::Grid(format!("pad must be >= 0 (got {pad})")));
    }
    if step > horizon {
        return Err(WfbmError::Grid(format!("step {step} exceeds horizon {horizon}")));
    }
    let span = horizon + pad;
    let count = (span / step - 1e-9).ceil() as usize;
    if count > MAX_GRID_POINTS {
        return Err(WfbmError::Grid(format!("{count} grid points exceed the cap of {MAX_GRID_POINTS}")));
    }
    let times = (1..=count).map(|k| k as f64 * step).collect();
    Ok(SimGrid { times, step })
}

impl SimGrid {
    /// Arbitrary strictly increasing positive times; `step` is taken as the
    /// mean spacing.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(WfbmError::Grid("empty grid".into()));
        }
        if times[0] <= 0.0 {
            return Err(WfbmError::Grid("grid times must be > 0 (B_0 = 0 is implicit)".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(WfbmError::Grid("grid times must be strictly increasing".into()));
        }
        if times.len() > MAX_GRID_POINTS {
            return Err(WfbmError::Grid(format!("{} grid points exceed the cap", times.len())));
        }
        let step = times[times.len() - 1] / times.len() as f64;
        Ok(SimGrid { times, step })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Time at index `j`, where index 0 is the implicit origin.
    pub fn time_at(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.times[j - 1]
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.times
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - (k + 1) as f64 * self.step).abs() <= 1e-9 * self.step * (k + 1) as f64)
    }

    /// Number of whole steps in `dt`, if `dt` is aligned to the grid.
    pub fn steps_in(&self, dt: f64) -> Option<usize> {
        let k = dt / self.step;
        let r = k.round();
        if r >= 0.0 && (k - r).abs() <= 1e-9 * r.max(1.0) {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Dense symmetric matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.n).fold(0.0, |m, i| m.max(self.get(i, i)))
    }
}

/// `Σ[i][j] = R(tᵢ, tⱼ)`; rows are assembled in parallel.
pub fn gram_matrix(p: &ProcessParams, g: &SimGrid) -> Result<SymMatrix> {
    let n = g.len();
    let t = g.times();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| covariance(p, t[i], t[j])).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(SymMatrix { n, data })
}

/// Lower-triangular Cholesky factor, with the diagonal jitter that was
/// needed to obtain it.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Computes `L z` into `out`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.l[i * self.n..i * self.n + i + 1];
            out[i] = row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
        }
    }
}

fn try_cholesky(m: &SymMatrix, jitter: f64) -> Option<Vec<f64>> {
    let n = m.n;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = l[i * n..i * n + j].iter().zip(&l[j * n..j * n + j]).map(|(a, b)| a * b).sum();
            if i == j {
                let d = m.get(i, i) + jitter - dot;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (m.get(i, j) - dot) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Factors `Σ + jitter·I`, escalating the jitter geometrically (×10) from
/// `jitter_start` only when factorization fails. Fails once the jitter would
/// exceed `jitter_max`.
pub fn cholesky_with_jitter(m: &SymMatrix, jitter_start: f64, jitter_max: f64) -> Result<CholeskyFactor> {
    let floor = f64::EPSILON * m.max_diag().max(f64::MIN_POSITIVE);
    let mut jitter = jitter_start.max(0.0);
    loop {
        if let Some(l) = try_cholesky(m, jitter) {
            return Ok(CholeskyFactor { n: m.n, l, jitter });
        }
        jitter = if jitter == 0.0 { floor } else { jitter * 10.0 };
        if jitter > jitter_max {
            return Err(WfbmError::NotPositiveDefinite { jitter, jitter_max });
        }
    }
}

/// Default jitter cap: `1e-8` times the largest diagonal entry.
pub fn default_jitter_max(m: &SymMatrix) -> f64 {
    1e-8 * m.max_diag()
}

/// The per-path generator: ChaCha8 keyed by the ensemble seed, with the path
/// index selecting the stream. Path `i` therefore draws the same normals no
/// matter how the work is scheduled.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// A factored Gaussian law on a grid, reusable across seeds.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    params: ProcessParams,
    grid: SimGrid,
    factor: CholeskyFactor,
}

impl GaussianSampler {
    pub fn new(p: &ProcessParams, g: &SimGrid) -> Result<Self> {
        let gram = gram_matrix(p, g)?;
        let factor = cholesky_with_jitter(&gram, 0.0, default_jitter_max(&gram))?;
        Ok(GaussianSampler { params: *p, grid: g.clone(), factor })
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<PathEnsemble> {
        self.sample_range(0, n, seed)
    }

    /// Paths `first..first + n` of the stream family keyed by `seed`.
    pub fn sample_range(&self, first: usize, n: usize, seed: u64) -> Result<PathEnsemble> {
        if n == 0 {
            return Err(WfbmError::Config("n_paths must be >= 1".into()));
        }
        let m = self.grid.len();
        let mut values = vec![0.0; n * m];
        values.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
            let mut rng = path_rng(seed, (first + i) as u64);
            let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            self.factor.apply(&z, out);
        });
        Ok(PathEnsemble {
            grid: self.grid.clone(),
            params: self.params,
            values,
            seed,
            n_paths: n,
            jitter: self.factor.jitter,
        })
    }
}

/// `n` sampled trajectories on a grid; immutable once built.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: SimGrid,
    params: ProcessParams,
    values: Vec<f64>,
    seed: u64,
    n_paths: usize,
    jitter: f64,
}

/// One trajectory, with the implicit `B₀ = 0` at index 0.
#[derive(Debug, Clone, Copy)]
pub struct Path<'a> {
    grid: &'a SimGrid,
    values: &'a [f64],
}

impl<'a> Path<'a> {
    pub fn new(grid: &'a SimGrid, values: &'a [f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(WfbmError::Grid(format!(
                "path has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Path { grid, values })
    }

    pub fn grid(&self) -> &'a SimGrid {
        self.grid
    }

    /// Grid values excluding the origin.
    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    /// `B` at grid index `j`; index 0 is the origin.
    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.values[j - 1]
        }
    }
}

/// Samples `n` paths of the process on `g`.
pub fn sample_paths(p: &ProcessParams, g: &SimGrid, n: usize, seed: u64) -> Result<PathEnsemble> {
    GaussianSampler::new(p, g)?.sample(n, seed)
}

#[derive(Serialize)]
struct EnsembleMetadata<'a> {
    a: f64,
    b: f64,
    kappa: f64,
    seed: u64,
    n_paths: usize,
    jitter: f64,
    grid: GridMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct GridMetadata {
    points: usize,
    step: f64,
    horizon: f64,
    uniform: bool,
}

impl PathEnsemble {
    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn params(&self) -> &ProcessParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn path(&self, i: usize) -> Path<'_> {
        let m = self.grid.len();
        Path { grid: &self.grid, values: &self.values[i * m..(i + 1) * m] }
    }

    pub fn paths(&self) -> impl Iterator<Item = Path<'_>> + '_ {
        (0..self.n_paths).map(move |i| self.path(i))
    }

    /// Value of path `i` at grid column `j` (0-based over stored times).
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.len() + j]
    }

    /// CSV rows `path_id,t,value`, preceded by `preamble` lines.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &str) -> Result<()> {
        w.write_all(preamble.as_bytes())?;
        writeln!(w, "path_id,t,value")?;
        for i in 0..self.n_paths {
            for (j, t) in self.grid.times().iter().enumerate() {
                writeln!(w, "{i},{t},{}", self.value(i, j))?;
            }
        }
        Ok(())
    }

    /// Sidecar metadata as TOML.
    pub fn metadata_toml(&self) -> String {
        let meta = EnsembleMetadata {
            a: self.params.a(),
            b: self.params.b(),
            kappa: self.params.kappa(),
            seed: self.seed,
            n_paths: self.n_paths,
            jitter: self.jitter,
            grid: GridMetadata {
                points: self.grid.len(),
                step: self.grid.step(),
                horizon: self.grid.horizon(),
                uniform: self.grid.is_uniform(),
            },
            note: None,
        };
        toml::to_string(&meta).expect("metadata serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::validate_params;

    #[test]
    fn grid_examples() {
        let g = build_grid(1.0, 0.25, 0.0).unwrap();
        assert_eq!(g.times(), &[0.25, 0.5, 0.75, 1.0]);
        let g = build_grid(1.0, 0.25, 0.5).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.horizon(), 1.5);
        assert!(build_grid(1.0, 2.0, 0.0).is_err());
        assert!(build_grid(1.0, 1e-4, 0.0).is_err());
        let g = build_grid(1.0, 1.0 / 1024.0, 0.0).unwrap();
        assert_eq!(g.len(), 1024);
        assert!(g.is_uniform());
        assert_eq!(g.steps_in(8.0 / 1024.0), Some(8));
        assert_eq!(g.steps_in(0.3 / 1024.0), None);
    }

    #[test]
    fn from_times_validation() {
        assert!(SimGrid::from_times(vec![0.0, 1.0]).is_err());
        assert!(SimGrid::from_times(vec![0.5, 0.5]).is_err());
        let g = SimGrid::from_times(vec![0.1, 0.4, 1.0]).unwrap();
        assert!(!g.is_uniform());
    }

    #[test]
    fn identity_factor() {
        let id = SymMatrix::from_fn(5, |i, j| if i == j { 1.0 } else { 0.0 });
        let f = cholesky_with_jitter(&id, 0.0, 1e-8).unwrap();
        assert_eq!(f.jitter(), 0.0);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(f.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn brownian_factor_is_explicit() {
        let t: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
        let m = SymMatrix::from_fn(4, |i, j| t[i].min(t[j]));
        let f = cholesky_with_jitter(&m, 0.0, 1e-8).unwrap();
        for i in 0..4 {
            for j in 0..=i {
                assert!((f.get(i, j) - 0.5).abs() < 1e-15, "L[{i}][{j}] = {}", f.get(i, j));
            }
        }
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        // diag(1, 1, -1) has one eigenvalue of -1.
        let m = SymMatrix::from_fn(3, |i, j| if i != j { 0.0 } else if i == 2 { -1.0 } else { 1.0 });
        assert!(matches!(
            cholesky_with_jitter(&m, 0.0, default_jitter_max(&m)),
            Err(WfbmError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = SymMatrix::from_fn(3, |_, _| 1.0);
        let f = cholesky_with_jitter(&m, 0.0, 1e-6).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let llt: f64 = (0..3).map(|k| f.get(i, k) * f.get(j, k)).sum();
                let target = m.get(i, j) + if i == j { f.jitter() } else { 0.0 };
                assert!((llt - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gram_diagonal_and_b_zero() {
        let g = build_grid(1.0, 0.125, 0.0).unwrap();
        let p = validate_params(0.4, 0.0).unwrap();
        let s = gram_matrix(&p, &g).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                let want = g.times()[i].min(g.times()[j]).powf(1.4);
                assert!((s.get(i, j) - want).abs() < 1e-12, "{i},{j}");
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }

    #[test]
    fn determinism() {
        let p = validate_params(-0.3, -0.4).unwrap();
        let g = build_grid(1.0, 1.0 / 64.0, 0.0).unwrap();
        let a = sample_paths(&p, &g, 1, 42).unwrap();
        let b = sample_paths(&p, &g, 1, 42).unwrap();
        assert_eq!(a.path(0).values(), b.path(0).values());
        let c = sample_paths(&p, &g, 1, 43).unwrap();
        assert_ne!(a.path(0).values(), c.path(0).values());
        assert_eq!(a.path(0).at(0), 0.0);
    }
}

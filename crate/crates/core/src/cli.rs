//! Command-line front end: run configuration, subcommand dispatch and CSV
//! emission.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, WfbmError};
use crate::estimators::{
    default_bandwidth, default_x_grid, h_norm, local_time_field, qcov_ensemble, write_estimates_csv,
    EstimatorConfig, QuadRule,
};
use crate::functions::TestFunction;
use crate::inequality_lab::{scan_l3_3_both, scan_one_sided, scan_two_sided, LemmaId, ScanGrid, ScanReport};
use crate::kernel::{validate_params, ProcessParams, Tolerances};
use crate::sampler::{build_grid, sample_paths};
use crate::verify::{
    hnorm_family, verify_bouleau_yor, verify_chain_rule, verify_hnorm_bound, verify_ito_expectation, verify_qvar,
    verify_tanaka_expectation, write_reports_csv, EstimateReport, IdentityId, VerifyOptions,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WFBM_OUT_DIR";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Everything a run depends on. Every field has a default, so a file holding
/// only `[params]` is runnable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub grid: GridConfig,
    pub estimator: EstimatorSection,
    pub mc: McConfig,
    pub tolerances: Tolerances,
    pub verify: VerifySection,
    pub scan: ScanSection,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    /// Default 0.5.
    pub a: f64,
    /// Default -0.3.
    pub b: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig { a: 0.5, b: -0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Evaluation horizon t. Default 1.
    pub horizon: f64,
    /// Grid spacing Δ. Default 1/1024.
    pub step: f64,
    /// Extra time past the horizon. Default: twice the largest ε.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { horizon: 1.0, step: 1.0 / 1024.0, pad: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Lookahead ladder in grid steps. Default `[32, 16, 8]`.
    pub eps_steps: Vec<u32>,
    /// Local-time bandwidth h. Default `2·√(Δ^{1+b}·horizon^a)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// x-lattice spacing. Default h/8.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_spacing: Option<f64>,
    /// x-lattice half width. Default `8·t^{(1+a+b)/2} + 2h`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_half_width: Option<f64>,
    /// Default left-riemann.
    pub quad_rule: QuadRule,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection { eps_steps: vec![32, 16, 8], bandwidth: None, x_spacing: None, x_half_width: None, quad_rule: QuadRule::LeftRiemann }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Default 500.
    pub n_paths: usize,
    /// Default 1.
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: 500, seed: 1 }
    }
}

/// Test functions and levels used by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Default `x^3`.
    pub chain: Vec<String>,
    /// Default `x^2` and `cos`.
    pub ito: Vec<String>,
    /// Default a C¹ bump and the step at 0.
    pub bouleau_yor: Vec<String>,
    /// Default `[0]`.
    pub tanaka_levels: Vec<f64>,
    /// Paths for the Tanaka harness. Default 1000.
    pub tanaka_n_paths: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            chain: vec!["x^3".into()],
            ito: vec!["x^2".into(), "cos".into()],
            bouleau_yor: vec!["bump:1,1".into(), "step:0".into()],
            tanaka_levels: vec![0.0],
            tanaka_n_paths: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub min_gap: f64,
    pub alphas: Vec<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        let g = ScanGrid::default();
        ScanSection { lo: g.lo, hi: g.hi, points: g.points, min_gap: g.min_gap, alphas: crate::inequality_lab::L3_3_ALPHAS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Default: `$WFBM_OUT_DIR`, else the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| WfbmError::Config(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| WfbmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn process(&self) -> Result<ProcessParams> {
        validate_params(self.params.a, self.params.b)
    }

    pub fn eps_ladder(&self) -> Result<Vec<f64>> {
        if self.estimator.eps_steps.is_empty() || self.estimator.eps_steps.iter().any(|&k| k < 2) {
            return Err(WfbmError::Config("eps_steps must be non-empty with every entry >= 2".into()));
        }
        Ok(self.estimator.eps_steps.iter().map(|&k| k as f64 * self.grid.step).collect())
    }

    /// Pad actually used: the configured one or twice the largest ε.
    pub fn pad(&self) -> Result<f64> {
        match self.grid.pad {
            Some(p) => Ok(p),
            None => Ok(2.0 * self.eps_ladder()?.iter().cloned().fold(0.0, f64::max)),
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            step: self.grid.step,
            quad_rule: self.estimator.quad_rule,
            tolerances: self.tolerances,
            bandwidth: self.estimator.bandwidth,
        }
    }

    pub fn scan_grid(&self) -> ScanGrid {
        ScanGrid { lo: self.scan.lo, hi: self.scan.hi, points: self.scan.points, min_gap: self.scan.min_gap }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// SHA-256 of the serialized config without the output directory, so
    /// moving the output does not change the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First line of every emitted CSV.
    pub fn header_comment(&self) -> String {
        format!("# wfbm {} config_hash={} seed={}\n", env!("CARGO_PKG_VERSION"), self.hash(), self.mc.seed)
    }
}

#[derive(Parser, Debug)]
#[command(name = "wfbm", version, about = "Weighted fractional Brownian motion: sampling, estimators and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a path ensemble.
    Sample(Common),
    /// Generalized quadratic covariation J_ε(f, t) along the ε ladder.
    Qcov {
        #[command(flatten)]
        common: Common,
        /// Test function, e.g. `identity`, `x^3`, `bump:0,1`.
        #[arg(long, default_value = "identity")]
        f: String,
        /// Evaluation time (default: grid horizon).
        #[arg(long)]
        t: Option<f64>,
    },
    /// Ensemble-mean raw and weighted local time.
    LocalTime {
        #[command(flatten)]
        common: Common,
        /// Evaluation times (default: grid horizon).
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
    },
    /// Monte Carlo checks of the identities.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        identity: String,
        /// Tanaka levels (replaces the configured list).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        /// Test function for chain / ito / bouleau-yor (replaces the configured list).
        #[arg(long)]
        f: Option<String>,
    },
    /// Ratio scans of the covariance inequalities.
    Scan {
        #[command(flatten)]
        common: Common,
        /// `L3_1` ... `L3_5`, or `all`.
        #[arg(long, default_value = "all")]
        lemma: String,
        #[arg(long)]
        points: Option<usize>,
    },
    /// 𝓗-norms over [0, horizon + 1].
    Hnorm {
        #[command(flatten)]
        common: Common,
        /// Test functions; default is the bump family plus `trunc:3`.
        #[arg(long = "f")]
        functions: Vec<String>,
    },
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub pad: Option<f64>,
    /// Lookahead ladder in grid steps, e.g. `32,16,8`.
    #[arg(long, value_delimiter = ',')]
    pub eps_steps: Vec<u32>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub quad_rule: Option<String>,
    /// Number of paths.
    #[arg(long = "n")]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub z_max: Option<f64>,
    #[arg(long)]
    pub rel_max: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write a plotting script next to the CSVs.
    #[arg(long)]
    pub emit_plot_script: bool,
}

impl Common {
    /// Config file (or defaults) with flag overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.a, c.params.a);
        set!(self.b, c.params.b);
        set!(self.horizon, c.grid.horizon);
        set!(self.step, c.grid.step);
        set!(self.n_paths, c.mc.n_paths);
        set!(self.seed, c.mc.seed);
        set!(self.z_max, c.tolerances.z_max);
        set!(self.rel_max, c.tolerances.rel_max);
        if self.pad.is_some() {
            c.grid.pad = self.pad;
        }
        if self.bandwidth.is_some() {
            c.estimator.bandwidth = self.bandwidth;
        }
        if self.out.is_some() {
            c.output.dir = self.out.clone();
        }
        if !self.eps_steps.is_empty() {
            c.estimator.eps_steps = self.eps_steps.clone();
        }
        if let Some(r) = &self.quad_rule {
            c.estimator.quad_rule = match r.as_str() {
                "left-riemann" | "left" => QuadRule::LeftRiemann,
                "trapezoid" => QuadRule::Trapezoid,
                other => return Err(WfbmError::Config(format!("unknown quad rule {other:?}"))),
            };
        }
        Ok(c)
    }
}

/// Maps an error onto the exit-code contract.
pub fn exit_code(e: &WfbmError) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Sample(c) => c,
        Command::Qcov { common, .. }
        | Command::LocalTime { common, .. }
        | Command::Verify { common, .. }
        | Command::Scan { common, .. }
        | Command::Hnorm { common, .. } => common,
    }
}

/// Runs one subcommand inside a thread pool sized by `--threads`.
pub fn run(cmd: &Command) -> Result<i32> {
    let flags = common(cmd);
    let cfg = flags.resolve()?;
    cfg.process()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = flags.threads {
        if n == 0 {
            return Err(WfbmError::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| WfbmError::Config(format!("thread pool: {e}")))?;
    let out = Output::new(&cfg)?;
    let code = pool.install(|| dispatch(cmd, &cfg, &out))?;
    if flags.emit_plot_script {
        out.write("plot.py", |w| Ok(w.write_all(plot_script(&out.written()).as_bytes())?))?;
    }
    Ok(code)
}

struct Output {
    dir: PathBuf,
    header: String,
    written: std::sync::Mutex<Vec<String>>,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.output_dir();
        fs::create_dir_all(&dir)?;
        Ok(Output { dir, header: cfg.header_comment(), written: Default::default() })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        if name.ends_with(".csv") {
            self.written.lock().expect("unpoisoned").push(name.to_string());
        }
        Ok(path)
    }

    fn written(&self) -> Vec<String> {
        self.written.lock().expect("unpoisoned").clone()
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Output) -> Result<i32> {
    match cmd {
        Command::Sample(_) => cmd_sample(cfg, out),
        Command::Qcov { f, t, .. } => cmd_qcov(cfg, out, f, *t),
        Command::LocalTime { t, .. } => cmd_local_time(cfg, out, t),
        Command::Verify { identity, x, f, .. } => {
            let mut cfg = cfg.clone();
            if !x.is_empty() {
                cfg.verify.tanaka_levels = x.clone();
            }
            if let Some(f) = f {
                cfg.verify.chain = vec![f.clone()];
                cfg.verify.ito = vec![f.clone()];
                cfg.verify.bouleau_yor = vec![f.clone()];
            }
            cmd_verify(&cfg, out, identity)
        }
        Command::Scan { lemma, points, .. } => {
            let mut cfg = cfg.clone();
            if let Some(n) = points {
                cfg.scan.points = *n;
            }
            cmd_scan(&cfg, out, lemma)
        }
        Command::Hnorm { functions, .. } => cmd_hnorm(cfg, out, functions),
    }
}

fn parse_functions(specs: &[String]) -> Result<Vec<TestFunction>> {
    specs.iter().map(|s| s.parse()).collect()
}

/// Path ensemble CSV plus a TOML sidecar.
fn cmd_sample(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let p = cfg.process()?;
    let grid = build_grid(cfg.grid.horizon, cfg.grid.step, cfg.pad()?)?;
    let ens = sample_paths(&p, &grid, cfg.mc.n_paths, cfg.mc.seed)?;
    let path = out.write("paths.csv", |w| ens.write_csv(w, &out.header))?;
    out.write("paths.meta.toml", |w| {
        write!(w, "{}", out.header)?;
        writeln!(w, "config_hash = \"{}\"", cfg.hash())?;
        Ok(w.write_all(ens.metadata_toml().as_bytes())?)
    })?;
    println!("wrote {} ({} paths x {} points, jitter {:e})", path.display(), ens.n_paths(), grid.len(), ens.jitter());
    Ok(EXIT_PASS)
}

/// Per-path `J_ε(f, t)` for every ε on the ladder.
fn cmd_qcov(cfg: &RunConfig, out: &Output, f: &str, t: Option<f64>) -> Result<i32> {
    let p = cfg.process()?;
    let f: TestFunction = f.parse()?;
    let t = t.unwrap_or(cfg.grid.horizon);
    let ladder = cfg.eps_ladder()?;
    let grid = build_grid(cfg.grid.horizon, cfg.grid.step, cfg.pad()?)?;
    let ens = sample_paths(&p, &grid, cfg.mc.n_paths, cfg.mc.seed)?;
    let mut rows = Vec::new();
    let mut summary = format!("# f={f}\n");
    for &eps in &ladder {
        let j = qcov_ensemble(&p, &ens, |x| f.value(x), t, eps, cfg.estimator.quad_rule)?;
        let (m, se) = crate::verify::mean_stderr(&j);
        let line = format!("# eps={eps} mean={m} stderr={se}");
        summary.push_str(&line);
        if f == TestFunction::identity() {
            summary.push_str(&format!(" target={}", p.kappa() * p.variance(t)));
        }
        summary.push('\n');
        println!("{}", &line[2..]);
        rows.extend(j.into_iter().enumerate().map(|(i, v)| (i, t, eps, v)));
    }
    let preamble = format!("{}{summary}", out.header);
    out.write("qcov.csv", |w| write_estimates_csv(w, &preamble, &rows))?;
    Ok(EXIT_PASS)
}

fn estimator_config(cfg: &RunConfig, p: &ProcessParams, grid: &crate::sampler::SimGrid, t_eval: Vec<f64>) -> Result<EstimatorConfig> {
    let mut ec = EstimatorConfig::with_defaults(p, grid, 2.0 * grid.step(), t_eval);
    ec.quad_rule = cfg.estimator.quad_rule;
    let h = cfg.estimator.bandwidth.unwrap_or_else(|| default_bandwidth(p, grid.step(), grid.horizon()));
    if cfg.estimator.bandwidth.is_some() || cfg.estimator.x_spacing.is_some() || cfg.estimator.x_half_width.is_some() {
        let t_max = ec.t_eval.iter().cloned().fold(0.0, f64::max);
        let auto = default_x_grid(p, t_max, h);
        let dx = cfg.estimator.x_spacing.unwrap_or(h / 8.0);
        let reach = cfg.estimator.x_half_width.unwrap_or(auto[auto.len() - 1]);
        if !(dx > 0.0 && reach > 0.0) {
            return Err(WfbmError::Config("x_spacing and x_half_width must be > 0".into()));
        }
        let n = (reach / dx).ceil() as i64;
        ec.x_grid = (-n..=n).map(|i| i as f64 * dx).collect();
        ec.bandwidth = h;
    }
    Ok(ec)
}

/// Ensemble-mean local-time field on the x-lattice.
fn cmd_local_time(cfg: &RunConfig, out: &Output, t: &[f64]) -> Result<i32> {
    let p = cfg.process()?;
    let t_eval = if t.is_empty() { vec![cfg.grid.horizon] } else { t.to_vec() };
    let grid = build_grid(cfg.grid.horizon, cfg.grid.step, cfg.pad()?)?;
    let ec = estimator_config(cfg, &p, &grid, t_eval)?;
    let ens = sample_paths(&p, &grid, cfg.mc.n_paths, cfg.mc.seed)?;
    let field = local_time_field(&p, &ens, &ec)?;
    let preamble = format!("{}# bandwidth={} dx={}\n", out.header, field.bandwidth(), field.dx());
    out.write("local_time.csv", |w| field.write_csv(w, &preamble))?;
    for &s in field.t_eval() {
        let (raw, weighted) = field.mass(s)?;
        println!("t={s} mass raw={raw} weighted={weighted} (expected {} and {})", s, p.variance(s));
    }
    Ok(EXIT_PASS)
}

/// Runs the selected harnesses; exit 0 iff every verdict passes.
fn cmd_verify(cfg: &RunConfig, out: &Output, identity: &str) -> Result<i32> {
    let reports = run_verify(cfg, identity)?;
    out.write("verify.csv", |w| write_reports_csv(w, &out.header, &reports))?;
    let mut failed = 0;
    for r in &reports {
        let eps = r.epsilon.map(|e| format!(" eps={e}")).unwrap_or_default();
        println!(
            "{:<4} {}{eps} mean={:.6} stderr={:.6} target={:.6} z={:.2} rel={:.4}",
            r.verdict.to_string().to_uppercase(),
            r.label,
            r.mc_mean,
            r.mc_stderr,
            r.target,
            r.z,
            r.rel_err
        );
        if !r.passed() {
            failed += 1;
        }
    }
    println!("{} of {} reports pass", reports.len() - failed, reports.len());
    Ok(if failed == 0 { EXIT_PASS } else { EXIT_VERDICT })
}

/// The reports `verify --identity <selector>` produces for `cfg`.
pub fn run_verify(cfg: &RunConfig, identity: &str) -> Result<Vec<EstimateReport>> {
    let selected: Vec<IdentityId> = if identity == "all" {
        IdentityId::ALL.to_vec()
    } else {
        vec![identity.parse()?]
    };
    let p = cfg.process()?;
    let t = cfg.grid.horizon;
    let ladder = cfg.eps_ladder()?;
    let (n, seed) = (cfg.mc.n_paths, cfg.mc.seed);
    let opts = cfg.verify_options();
    let mut reports = Vec::new();
    for id in selected {
        match id {
            IdentityId::Qvar => reports.extend(verify_qvar(&p, t, &ladder, n, seed, &opts)?),
            IdentityId::Chain => {
                for f in parse_functions(&cfg.verify.chain)? {
                    reports.extend(verify_chain_rule(&p, &f, t, &ladder, n, seed, &opts)?);
                }
            }
            IdentityId::Ito => {
                for f in parse_functions(&cfg.verify.ito)? {
                    reports.extend(verify_ito_expectation(&p, &f, t, &ladder, n, seed, &opts)?);
                }
            }
            IdentityId::BouleauYor => {
                for f in parse_functions(&cfg.verify.bouleau_yor)? {
                    reports.extend(verify_bouleau_yor(&p, &f, t, &ladder, n, seed, &opts)?);
                }
            }
            IdentityId::Tanaka => {
                for &x in &cfg.verify.tanaka_levels {
                    reports.push(verify_tanaka_expectation(&p, x, t, cfg.verify.tanaka_n_paths, seed, &opts)?);
                }
            }
            IdentityId::Hnorm => reports.extend(verify_hnorm_bound(&p, &hnorm_family(), t, &ladder, n, seed, &opts)?),
        }
    }
    Ok(reports)
}

/// One CSV per scanned lemma; L3_3 writes both exponent variants.
fn cmd_scan(cfg: &RunConfig, out: &Output, lemma: &str) -> Result<i32> {
    let reports = run_scan(cfg, lemma)?;
    for r in &reports {
        let name = format!("scan_{}_{}.csv", r.lemma, sanitize(&r.variant));
        out.write(&name, |w| r.write_csv(w, &out.header))?;
        println!("{}", r.summary_line().trim_start_matches("# summary "));
        if let Some(n) = &r.note {
            println!("  note: {n}");
        }
    }
    Ok(EXIT_PASS)
}

pub fn run_scan(cfg: &RunConfig, lemma: &str) -> Result<Vec<ScanReport>> {
    let p = cfg.process()?;
    let grid = cfg.scan_grid();
    let lemmas: Vec<LemmaId> = if lemma == "all" { LemmaId::ALL.to_vec() } else { vec![lemma.parse()?] };
    let mut out = Vec::new();
    for l in lemmas {
        match l {
            LemmaId::L3_1 | LemmaId::L3_2 => out.push(scan_two_sided(&p, l, &grid)?),
            LemmaId::L3_3 => {
                let (x, y) = scan_l3_3_both(&p, &grid, &cfg.scan.alphas)?;
                out.push(x);
                out.push(y);
            }
            _ => out.push(scan_one_sided(&p, l, &grid, &cfg.scan.alphas)?),
        }
    }
    Ok(out)
}

fn sanitize(s: &str) -> String {
    let s = s.replace('+', "plus").replace('-', "minus");
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect::<String>().trim_matches('_').to_string()
}

/// `‖f‖_𝓗` for each function over `[0, horizon + 1]`.
fn cmd_hnorm(cfg: &RunConfig, out: &Output, specs: &[String]) -> Result<i32> {
    let p = cfg.process()?;
    let fs = if specs.is_empty() { hnorm_family() } else { parse_functions(specs)? };
    let norms = fs.iter().map(|f| h_norm(f, cfg.grid.horizon, &p)).collect::<Result<Vec<f64>>>()?;
    out.write("hnorm.csv", |w| {
        w.write_all(out.header.as_bytes())?;
        writeln!(w, "f,horizon,norm")?;
        for (f, n) in fs.iter().zip(&norms) {
            writeln!(w, "{f},{},{n}", cfg.grid.horizon)?;
        }
        Ok(())
    })?;
    for (f, n) in fs.iter().zip(&norms) {
        println!("{f} {n}");
    }
    Ok(EXIT_PASS)
}

/// A generic matplotlib script that plots whichever CSVs were written.
pub fn plot_script(csvs: &[String]) -> String {
    let list = csvs.iter().map(|c| format!("    {c:?},\n")).collect::<String>();
    format!(
        r##"# Generated by wfbm; plots the CSVs written next to it.
import sys
import pandas as pd
import matplotlib.pyplot as plt

FILES = [
{list}]

for name in FILES:
    df = pd.read_csv(name, comment="#")
    fig, ax = plt.subplots()
    if "path_id" in df and "value" in df:
        for pid, g in list(df.groupby("path_id"))[:20]:
            ax.plot(g["t"], g["value"], lw=0.6)
        ax.set_xlabel("t")
    elif "weighted" in df:
        for t, g in df.groupby("t"):
            ax.plot(g["x"], g["weighted"], label=f"t={{t}}")
        ax.set_xlabel("x")
        ax.legend()
    elif "estimate" in df:
        df.boxplot(column="estimate", by="epsilon", ax=ax)
    elif "mc_mean" in df:
        ax.errorbar(range(len(df)), df["mc_mean"] - df["target"], yerr=4 * df["mc_stderr"], fmt="o")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xticks(range(len(df)))
        ax.set_xticklabels(df["identity"], rotation=90, fontsize=6)
    elif "ratio" in df:
        ax.hist(df["ratio"], bins=50)
        ax.set_xlabel("ratio")
    else:
        df.plot(ax=ax)
    ax.set_title(name)
    fig.tight_layout()
    fig.savefig(name.replace(".csv", ".png"), dpi=120)
    plt.close(fig)
    print("wrote", name.replace(".csv", ".png"), file=sys.stderr)
"##
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut c = RunConfig::default();
        c.grid.pad = Some(0.125);
        c.estimator.bandwidth = Some(0.2);
        c.output.dir = Some(PathBuf::from("out"));
        c.verify.tanaka_levels = vec![-0.5, 0.0, 1.25];
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn params_only_config_is_runnable() {
        let c = RunConfig::from_toml("[params]\na = -0.3\nb = -0.4\n").unwrap();
        assert_eq!(c.grid, GridConfig::default());
        assert!(c.process().is_ok());
        assert_eq!(c.eps_ladder().unwrap(), vec![32.0 / 1024.0, 16.0 / 1024.0, 8.0 / 1024.0]);
        assert!(RunConfig::from_toml("[params]\nc = 1\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dir = Some(PathBuf::from("/tmp/x"));
        assert_eq!(a.hash(), b.hash());
        b.mc.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[params]\na = -0.3\nb = -0.4\n[mc]\nseed = 9\n").unwrap();
        let flags = Common { config: Some(path), b: Some(-0.2), eps_steps: vec![4, 2], ..Default::default() };
        let c = flags.resolve().unwrap();
        assert_eq!((c.params.a, c.params.b, c.mc.seed), (-0.3, -0.2, 9));
        assert_eq!(c.estimator.eps_steps, vec![4, 2]);
        assert!((c.pad().unwrap() - 8.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn exit_codes_for_bad_input() {
        assert_eq!(run_from_args(["wfbm", "sample", "--a", "-0.5", "--b", "0.6", "--out", "/nonexistent-wfbm"]), EXIT_CONFIG);
        assert_eq!(run_from_args(["wfbm", "bogus"]), EXIT_CONFIG);
        assert_eq!(exit_code(&WfbmError::NotPositiveDefinite { jitter: 1.0, jitter_max: 0.5 }), EXIT_NUMERIC);
    }
}

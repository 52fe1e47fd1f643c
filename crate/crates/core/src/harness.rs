//! Experiment orchestration: configuration, seeded parallel runs,
//! aggregation and CSV/JSON output.
//!
//! Configuration files are flat `key = value` lines; `#` starts a comment.
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `spectrum` | `mp`, `beta:a,b,lo,hi`, `tabulated:path` | `mp` |
//! | `noise` | `gaussian`, `ri` | `gaussian` |
//! | `theta` | SNR `θ ≥ 0` | `2` |
//! | `m`, `n` | dimensions, `m ≤ n` | `1000`, `2000` |
//! | `prior_u`, `prior_v` | `rademacher`, `gaussian` | `rademacher` |
//! | `w0_u`, `w0_v` | side-information strength in `[0, 1)` | `0.04` |
//! | `iterations` | `T ≥ 1` | `10` |
//! | `seeds` | count `k` (seeds `0..k`), range `a..b` or list `1,4,9` | `20` |
//! | `methods` | comma list of `oamp`, `pca`, `amp`, `se-only` | `oamp,pca` |
//! | `out` | CSV path; metadata goes next to it as `<stem>.meta.json` | `results.csv` |
//! | `workers` | worker threads | `OAMP_WORKERS` or all cores |
//! | `sampling` | `iid`, `quantile` | `iid` |
//! | `tolerance` | agreement threshold reported in the metadata | `0.02` |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_amp_run, gaussian_amp_se, pca_estimate, AmpState};
use crate::error::{Error, Result};
use crate::model::{make_instance, thin_svd, InstanceSpec, NoiseModel, SpectrumSampling};
use crate::oamp::{optimal_oamp_run, IterationTrace, OptimalPlan, TraceRow};
use crate::scalar_channel::{mmse, Prior, PriorModel};
use crate::spectra::{AtomBranch, InducedMeasures, Measure, ShrinkageSet, SpectralAtom, SpectrumModel};
use crate::state_evolution::{gaussian_fixed_point, optimal_se_run_with, FixedPoint, OptimalSe, SeState};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "OAMP_WORKERS";

/// Noise spectrum as written in configuration files.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSpec {
    MarchenkoPastur,
    Beta { a: f64, b: f64, lo: f64, hi: f64 },
    Tabulated(PathBuf),
}

impl SpectrumSpec {
    /// The limiting law at aspect ratio `delta`.
    pub fn build(&self, delta: f64) -> Result<SpectrumModel> {
        match self {
            SpectrumSpec::MarchenkoPastur => SpectrumModel::marchenko_pastur(delta),
            SpectrumSpec::Beta { a, b, lo, hi } => SpectrumModel::shifted_beta(*a, *b, *lo, *hi, delta),
            SpectrumSpec::Tabulated(path) => {
                let (grid, density) = read_table(path)?;
                SpectrumModel::tabulated(grid, density, delta)
            }
        }
    }

    fn resolve_relative_to(&mut self, dir: &Path) {
        if let SpectrumSpec::Tabulated(p) = self {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

impl FromStr for SpectrumSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match head.to_ascii_lowercase().as_str() {
            "mp" | "marchenko-pastur" => Ok(SpectrumSpec::MarchenkoPastur),
            "beta" => {
                let v: Vec<f64> = rest
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("bad beta spectrum `{s}`: {e}")))?;
                match v[..] {
                    [a, b, lo, hi] => Ok(SpectrumSpec::Beta { a, b, lo, hi }),
                    _ => Err(Error::Config(format!("beta spectrum needs a,b,lo,hi, got `{s}`"))),
                }
            }
            "tabulated" if !rest.is_empty() => Ok(SpectrumSpec::Tabulated(PathBuf::from(rest.trim()))),
            _ => Err(Error::Config(format!("unknown spectrum `{s}`"))),
        }
    }
}

impl fmt::Display for SpectrumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumSpec::MarchenkoPastur => f.write_str("mp"),
            SpectrumSpec::Beta { a, b, lo, hi } => write!(f, "beta:{a},{b},{lo},{hi}"),
            SpectrumSpec::Tabulated(p) => write!(f, "tabulated:{}", p.display()),
        }
    }
}

impl Serialize for SpectrumSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Two-column `λ density` table; commas or whitespace, `#` comments.
pub fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut grid = Vec::new();
    let mut density = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|c| !c.is_empty()).collect();
        let parse = |c: &str| {
            c.parse::<f64>()
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), k + 1)))
        };
        match cols[..] {
            [l, d] => {
                grid.push(parse(l)?);
                density.push(parse(d)?);
            }
            _ => return Err(Error::Config(format!("{}:{}: expected two columns", path.display(), k + 1))),
        }
    }
    Ok((grid, density))
}

/// How the noise matrix is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// I.i.d. Gaussian entries; the spectrum must be Marchenko–Pastur.
    Gaussian,
    /// Haar rotations of singular values drawn from the spectrum.
    Ri,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "iid" => Ok(NoiseKind::Gaussian),
            "ri" | "rotation-invariant" => Ok(NoiseKind::Ri),
            other => Err(Error::Config(format!("unknown noise `{other}`"))),
        }
    }
}

/// Estimators a run can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Oamp,
    Pca,
    Amp,
    SeOnly,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Oamp => "oamp",
            Method::Pca => "pca",
            Method::Amp => "amp",
            Method::SeOnly => "se",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oamp" => Ok(Method::Oamp),
            "pca" => Ok(Method::Pca),
            "amp" => Ok(Method::Amp),
            "se-only" | "se" => Ok(Method::SeOnly),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Parse a comma-separated method list; an empty string gives no methods.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Parse `k` (seeds `0..k`), `a..b` or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    let bad = |e: std::num::ParseIntError| Error::Config(format!("bad seeds `{s}`: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().map_err(bad)?, b.trim().parse::<u64>().map_err(bad)?);
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse::<u64>().map_err(bad)).collect();
    }
    let k = s.parse::<u64>().map_err(bad)?;
    Ok((0..k).collect())
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// One experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub spectrum: SpectrumSpec,
    pub noise: NoiseKind,
    pub theta: f64,
    pub m: usize,
    pub n: usize,
    pub prior_u: Prior,
    pub prior_v: Prior,
    pub w0_u: f64,
    pub w0_v: f64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub workers: usize,
    pub sampling: SpectrumSampling,
    pub tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            spectrum: SpectrumSpec::MarchenkoPastur,
            noise: NoiseKind::Gaussian,
            theta: 2.0,
            m: 1000,
            n: 2000,
            prior_u: Prior::Rademacher,
            prior_v: Prior::Rademacher,
            w0_u: 0.04,
            w0_v: 0.04,
            iterations: 10,
            seeds: (0..20).collect(),
            methods: vec![Method::Oamp, Method::Pca],
            out: PathBuf::from("results.csv"),
            workers: default_workers(),
            sampling: SpectrumSampling::Iid,
            tolerance: 0.02,
        }
    }
}

impl ExperimentConfig {
    /// Parse `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", k + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", k + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a configuration file; tabulated spectrum paths are taken
    /// relative to the file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.spectrum.resolve_relative_to(dir);
        }
        Ok(cfg)
    }

    /// Set one key; used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| Error::Config(format!("`{key}`: {e}")))
        }
        match key {
            "spectrum" => self.spectrum = value.parse()?,
            "noise" => self.noise = value.parse()?,
            "theta" => self.theta = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "prior_u" => self.prior_u = value.parse()?,
            "prior_v" => self.prior_v = value.parse()?,
            "w0_u" => self.w0_u = num(key, value)?,
            "w0_v" => self.w0_v = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "methods" => self.methods = parse_methods(value)?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = num(key, value)?,
            "sampling" => {
                self.sampling = match value.to_ascii_lowercase().as_str() {
                    "iid" => SpectrumSampling::Iid,
                    "quantile" => SpectrumSampling::Quantile,
                    other => return Err(Error::Config(format!("unknown sampling `{other}`"))),
                }
            }
            "tolerance" => self.tolerance = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.m > self.n {
            return fail(format!("need 0 < m <= n, got m = {}, n = {}", self.m, self.n));
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return fail(format!("theta must be finite and >= 0, got {}", self.theta));
        }
        for w in [self.w0_u, self.w0_v] {
            if !(0.0..1.0).contains(&w) {
                return fail(format!("side-information strength must lie in [0, 1), got {w}"));
            }
        }
        if self.workers == 0 {
            return fail("workers must be positive".into());
        }
        if self.noise == NoiseKind::Gaussian && self.spectrum != SpectrumSpec::MarchenkoPastur {
            return fail("gaussian noise requires spectrum = mp".into());
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn prior_u(&self) -> PriorModel {
        PriorModel {
            kind: self.prior_u,
            side_info_strength: self.w0_u,
        }
    }

    pub fn prior_v(&self) -> PriorModel {
        PriorModel {
            kind: self.prior_v,
            side_info_strength: self.w0_v,
        }
    }

    fn simulated_methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.methods.iter().copied().filter(|m| *m != Method::SeOnly).collect();
        m.sort();
        m
    }
}

/// Deterministic predictions shared by every seed.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub prior_u: PriorModel,
    pub prior_v: PriorModel,
    pub measures: Arc<InducedMeasures>,
    pub optimal: OptimalSe,
    pub amp: Vec<AmpState>,
    /// Gaussian-noise fixed point; only for the Marchenko–Pastur spectrum.
    pub fixed_point: Option<FixedPoint>,
}

impl Predictions {
    pub fn compute(cfg: &ExperimentConfig) -> Result<Self> {
        let spectrum = Arc::new(cfg.spectrum.build(cfg.delta())?);
        let measures = Arc::new(InducedMeasures::new(ShrinkageSet::new(spectrum, cfg.theta)?)?);
        let (pu, pv) = (cfg.prior_u(), cfg.prior_v());
        let optimal = optimal_se_run_with(measures.clone(), pu, pv, cfg.iterations, false)?;
        let amp = gaussian_amp_se(cfg.theta, cfg.delta(), pu, pv, cfg.iterations);
        let fixed_point = if cfg.spectrum == SpectrumSpec::MarchenkoPastur {
            match gaussian_fixed_point(cfg.theta, cfg.delta(), pu, pv) {
                Ok(fp) => Some(fp),
                Err(e) => {
                    log::warn!("fixed point unavailable: {e}");
                    None
                }
            }
        } else {
            None
        };
        Ok(Predictions {
            prior_u: pu,
            prior_v: pv,
            measures,
            optimal,
            amp,
            fixed_point,
        })
    }

    pub fn iterations(&self) -> usize {
        self.optimal.states.len() - 1
    }

    /// The optimal iteration's precomputed denoisers.
    pub fn plan(&self) -> OptimalPlan {
        OptimalPlan {
            measures: self.measures.clone(),
            prior_u: self.prior_u,
            prior_v: self.prior_v,
            se: self.optimal.states.clone(),
            denoisers: self.optimal.denoisers.clone(),
        }
    }

    /// Largest outlier above the bulk, if any.
    pub fn top_atom(&self) -> Option<&SpectralAtom> {
        self.measures.atoms().iter().find(|a| a.branch == AtomBranch::AboveBulk)
    }

    /// Predicted `(cos²_u, cos²_v)` of `method` at iteration `t ≥ 1`.
    pub fn cos2(&self, method: Method, t: usize) -> (f64, f64) {
        match method {
            Method::Oamp | Method::SeOnly => {
                let s = &self.optimal.states[t];
                (1.0 - s.mmse_u, 1.0 - s.mmse_v)
            }
            Method::Amp => {
                let s = &self.amp[t];
                (1.0 - mmse(self.prior_u, s.w_u), 1.0 - mmse(self.prior_v, s.w_v))
            }
            Method::Pca => self.top_atom().map(|a| (a.nu1_mass, a.nu2_mass)).unwrap_or((0.0, 0.0)),
        }
    }
}

/// Traces of every simulated method for one seed.
pub type SeedResult = BTreeMap<Method, IterationTrace>;

/// Draw the instance for `seed` and run the simulated methods on it.
pub fn run_seed(cfg: &ExperimentConfig, preds: &Predictions, plan: &OptimalPlan, seed: u64) -> Result<SeedResult> {
    let methods = cfg.simulated_methods();
    let mut out = BTreeMap::new();
    if methods.is_empty() {
        return Ok(out);
    }
    let noise = match cfg.noise {
        NoiseKind::Gaussian => NoiseModel::Gaussian,
        NoiseKind::Ri => NoiseModel::RotationInvariant(preds.measures.shrinkage().spectrum_arc().clone()),
    };
    let spec = InstanceSpec {
        m: cfg.m,
        n: cfg.n,
        theta: cfg.theta,
        prior_u: preds.prior_u,
        prior_v: preds.prior_v,
        noise,
        sampling: cfg.sampling,
        retain_noise: false,
    };
    let inst = make_instance(&spec, seed)?;
    let needs_svd = methods.iter().any(|m| matches!(m, Method::Oamp | Method::Pca));
    let svd = if needs_svd { Some(thin_svd(&inst.y)?) } else { None };
    for method in methods {
        let trace = match method {
            Method::Oamp => optimal_oamp_run(&inst, svd.as_ref().expect("svd computed"), plan)?,
            Method::Pca => pca_estimate(svd.as_ref().expect("svd computed"), &inst).trace,
            Method::Amp => gaussian_amp_run(&inst, preds.prior_u, preds.prior_v, cfg.iterations)?.trace,
            Method::SeOnly => continue,
        };
        out.insert(method, trace);
    }
    Ok(out)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub t: usize,
    pub mean_cos2_u: Option<f64>,
    pub se_cos2_u: Option<f64>,
    pub mean_cos2_v: Option<f64>,
    pub se_cos2_v: Option<f64>,
    pub pred_cos2_u: Option<f64>,
    pub pred_cos2_v: Option<f64>,
    pub mean_mse_u: Option<f64>,
    pub mean_mse_v: Option<f64>,
}

/// A predicted curve over `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedCurve {
    pub method: String,
    pub cos2_u: Vec<f64>,
    pub cos2_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomSummary {
    pub location: f64,
    pub nu1_mass: f64,
    pub nu2_mass: f64,
    pub nu3_mass: f64,
    pub above_bulk: bool,
}

impl From<&SpectralAtom> for AtomSummary {
    fn from(a: &SpectralAtom) -> Self {
        AtomSummary {
            location: a.location,
            nu1_mass: a.nu1_mass,
            nu2_mass: a.nu2_mass,
            nu3_mass: a.nu3_mass,
            above_bulk: a.branch == AtomBranch::AboveBulk,
        }
    }
}

/// Everything that is not a per-iteration average.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seeds_completed: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    pub atoms: Vec<AtomSummary>,
    pub nu2_zero_mass: f64,
    pub optimal_se: Vec<SeState>,
    pub se_plateau: Option<usize>,
    pub amp_se: Vec<AmpState>,
    pub fixed_point: Option<FixedPoint>,
}

#[derive(Debug, Clone)]
pub struct AggregateReport {
    pub rows: Vec<ReportRow>,
    pub predictions: Vec<PredictedCurve>,
    pub metadata: Metadata,
}

impl AggregateReport {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ReportRow> {
        let tag = method.tag();
        self.rows.iter().filter(move |r| r.method == tag)
    }
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Compute predictions, run every seed on a pool of `cfg.workers` threads
/// and average.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    // seeds are the unit of parallelism; sequential kernels also keep the
    // floating-point results independent of the worker count
    faer::set_global_parallelism(faer::Par::Seq);
    let preds = Predictions::compute(cfg)?;
    let plan = preds.plan();
    let simulated = cfg.simulated_methods();
    let mut results: BTreeMap<u64, Result<SeedResult>> = BTreeMap::new();
    if !simulated.is_empty() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let out: Vec<(u64, Result<SeedResult>)> = pool.install(|| {
            cfg.seeds
                .par_iter()
                .map(|&seed| {
                    let r = run_seed(cfg, &preds, &plan, seed);
                    if let Err(e) = &r {
                        log::warn!("seed {seed} failed: {e}");
                    }
                    (seed, r)
                })
                .collect()
        });
        results.extend(out);
    }
    aggregate(cfg, &preds, results)
}

/// Average per-seed results; seeds are visited in increasing order so the
/// output does not depend on completion order.
pub fn aggregate(
    cfg: &ExperimentConfig,
    preds: &Predictions,
    results: BTreeMap<u64, Result<SeedResult>>,
) -> Result<AggregateReport> {
    let total = results.len();
    let mut failures = Vec::new();
    let mut ok: BTreeMap<u64, SeedResult> = BTreeMap::new();
    for (seed, r) in results {
        match r {
            Ok(v) => {
                ok.insert(seed, v);
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {total} seeds failed and were excluded", failures.len());
    }
    if failures.len() * 5 > total {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    let t_max = preds.iterations();
    let mut methods = cfg.methods.clone();
    methods.sort();
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    for &method in &methods {
        let curve: Vec<(f64, f64)> = (1..=t_max).map(|t| preds.cos2(method, t)).collect();
        predictions.push(PredictedCurve {
            method: method.tag().into(),
            cos2_u: curve.iter().map(|c| c.0).collect(),
            cos2_v: curve.iter().map(|c| c.1).collect(),
        });
        for t in 1..=t_max {
            let (pu, pv) = curve[t - 1];
            let mut row = ReportRow {
                method: method.tag().into(),
                t,
                mean_cos2_u: None,
                se_cos2_u: None,
                mean_cos2_v: None,
                se_cos2_v: None,
                pred_cos2_u: Some(pu),
                pred_cos2_v: Some(pv),
                mean_mse_u: None,
                mean_mse_v: None,
            };
            if method != Method::SeOnly && !ok.is_empty() {
                // PCA is one-shot; its single row is repeated at every t
                let pick = |r: &SeedResult| -> TraceRow {
                    let trace = &r[&method];
                    if method == Method::Pca {
                        trace.rows[0]
                    } else {
                        trace.rows[t - 1]
                    }
                };
                let picked: Vec<TraceRow> = ok.values().map(pick).collect();
                let col = |f: fn(&TraceRow) -> f64| picked.iter().map(f).collect::<Vec<f64>>();
                let (mu, su) = mean_and_se(&col(|r| r.cos2_u));
                let (mv, sv) = mean_and_se(&col(|r| r.cos2_v));
                row.mean_cos2_u = Some(mu);
                row.se_cos2_u = Some(su);
                row.mean_cos2_v = Some(mv);
                row.se_cos2_v = Some(sv);
                row.mean_mse_u = Some(mean_and_se(&col(|r| r.mse_u)).0);
                row.mean_mse_v = Some(mean_and_se(&col(|r| r.mse_v)).0);
            }
            rows.push(row);
        }
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let metadata = Metadata {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp,
        seeds_completed: ok.keys().copied().collect(),
        failures,
        atoms: preds.measures.atoms().iter().map(AtomSummary::from).collect(),
        nu2_zero_mass: preds.measures.nu2_zero_mass(),
        optimal_se: preds.optimal.states.clone(),
        se_plateau: preds.optimal.plateau,
        amp_se: preds.amp.clone(),
        fixed_point: preds.fixed_point,
    };
    Ok(AggregateReport {
        rows,
        predictions,
        metadata,
    })
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

/// Write the per-(method, iteration) table with a header row.
pub fn emit_csv(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error(path))?;
    w.write_record([
        "method",
        "t",
        "mean_cos2_u",
        "se_cos2_u",
        "mean_cos2_v",
        "se_cos2_v",
        "pred_cos2_u",
        "pred_cos2_v",
        "mean_mse_u",
        "mean_mse_v",
    ])
    .map_err(csv_error(path))?;
    for row in &report.rows {
        w.serialize(row).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Parse a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(csv_error(path))
}

/// `results.csv` → `results.meta.json`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn emit_metadata(report: &AggregateReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.metadata)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    fs::write(path, text + "\n").map_err(io_error(path))
}

/// Write the CSV to `path` and the metadata next to it.
pub fn write_report(report: &AggregateReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    emit_csv(report, path)?;
    emit_metadata(report, &metadata_path(path))
}

/// One numerical consistency check of the spectral layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCheck {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for SpectralCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<44} value {:>14.8e}  target {:>14.8e}  tol {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.target,
            self.tolerance
        )
    }
}

fn check(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> SpectralCheck {
    SpectralCheck {
        name: name.into(),
        value,
        target,
        tolerance,
        passed: (value - target).abs() <= tolerance,
    }
}

/// Normalization, moment, transform and boundary-value checks of the
/// induced measures for one spectrum and SNR.
pub fn spectra_check(spectrum: Arc<SpectrumModel>, theta: f64) -> Result<Vec<SpectralCheck>> {
    let measures = InducedMeasures::new(ShrinkageSet::new(spectrum.clone(), theta)?)?;
    let d = spectrum.delta();
    let mut out = vec![
        check("nu1 total mass", measures.inner_product(Measure::Nu1, |_| 1.0), 1.0, 1e-4),
        check("nu2 total mass", measures.inner_product(Measure::Nu2, |_| 1.0), 1.0, 1e-4),
        check("nu3 total mass", measures.inner_product(Measure::Nu3, |_| 1.0), 0.0, 1e-4),
        check(
            "nu3 first moment",
            measures.inner_product(Measure::Nu3, |s| s),
            theta * d.sqrt() / (1.0 + d),
            1e-3,
        ),
    ];
    for (k, a) in measures.atoms().iter().enumerate() {
        for (label, mass) in [("nu1", a.nu1_mass), ("nu2", a.nu2_mass)] {
            let mut c = check(format!("atom {k} at {:.4}: {label} mass in (0, 1]", a.location), mass, 0.5, 0.5);
            c.passed = mass > 0.0 && mass <= 1.0;
            out.push(c);
        }
    }
    let t2 = theta * theta;
    for z in [Complex64::new(-1.0, 0.5), Complex64::new(2.0, 1.0), Complex64::new(12.0, 3.0)] {
        let sm = spectrum.stieltjes(z)?;
        let g = 1.0 - t2 * spectrum.c_transform(z)?;
        let e1 = (measures.nu1_stieltjes(z) - sm / g).norm();
        let e2 = (measures.nu2_stieltjes(z) - (d * sm + (1.0 - d) / z) / g).norm();
        out.push(check(format!("nu1 Stieltjes at {z}"), e1, 0.0, 1e-4));
        out.push(check(format!("nu2 Stieltjes at {z}"), e2, 0.0, 1e-4));
        if let Some(exact) = spectrum.closed_form_stieltjes(z) {
            out.push(check(format!("mu Stieltjes vs closed form at {z}"), (sm - exact).norm(), 0.0, 1e-6));
        }
    }
    let (lo, hi) = spectrum.support();
    let mut worst: Option<f64> = None;
    for k in 1..20 {
        let x = lo + (hi - lo) * k as f64 / 20.0;
        let Some(s) = spectrum.closed_form_stieltjes(Complex64::new(x, -1e-6)) else {
            break;
        };
        let h = std::f64::consts::PI * spectrum.hilbert(x);
        let m = std::f64::consts::PI * spectrum.density(x);
        let e = ((s.re - h).abs() / h.abs().max(1.0)).max((s.im - m).abs() / m.abs().max(1.0));
        worst = Some(worst.map_or(e, |w: f64| w.max(e)));
    }
    match worst {
        Some(e) => out.push(check("Plemelj boundary values (relative)", e, 0.0, 1e-3)),
        None => log::info!("no closed-form transform for {}; Plemelj check skipped", spectrum.descriptor()),
    }
    Ok(out)
}

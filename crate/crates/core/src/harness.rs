//! Experiment configuration, Monte Carlo orchestration and result files.
//!
//! Workers receive immutable task descriptors and return values; every file
//! is written by the calling thread after the computation, each through a
//! temporary file that is renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults::Tolerances;
use crate::error::{LrdError, Result};
use crate::estimator::{kernel_distance, sample_autocov, xi_scale, EstimateSidecar};
use crate::gaussian_limit::{write_pairings_csv, SigmaConfig, SigmaOperator};
use crate::grid::{hs_inner_kernel, GridSpace, KernelOnGrid};
use crate::lift::{build_model, delta_scale, finite_n_covariance, limit_covariance, simulate_lifted, SelfAdjointModel};
use crate::model::{classify_regime, InnovationModel, Model, ModelSpec, Regime};
use crate::process::{
    population_autocov, population_autocov_truncated, truncation_bound, ConvolutionMethod, PathSimulator, ProcessConfig,
    SamplePath, StationaryGaussian, TruncationRule, DEFAULT_J_POP,
};
use crate::rng::{stream, Purpose};
use crate::rosenblatt::{FarField, RosenblattKernelSpec, RosenblattSampler, SpecialKernelParams};
use crate::stats::{anderson_darling, moments, AndersonDarling, Estimate, Moments};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Number of cosine modes used to build projection kernels.
pub const TEST_MODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Autocov,
    VerifyClt,
    VerifyRosenblatt,
    RosenblattSample,
    KernelDistance,
    LiftCheck,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Simulate,
        Task::Autocov,
        Task::VerifyClt,
        Task::VerifyRosenblatt,
        Task::RosenblattSample,
        Task::KernelDistance,
        Task::LiftCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Autocov => "autocov",
            Task::VerifyClt => "verify-clt",
            Task::VerifyRosenblatt => "verify-rosenblatt",
            Task::RosenblattSample => "rosenblatt-sample",
            Task::KernelDistance => "kernel-distance",
            Task::LiftCheck => "lift-check",
        }
    }
}

impl FromStr for Task {
    type Err = LrdError;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| LrdError::config(format!("unknown task '{s}'")))
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn one() -> usize {
    1
}

fn default_j_pop() -> usize {
    DEFAULT_J_POP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Sample sizes, strictly ascending.
    pub n: Vec<usize>,
    #[serde(default)]
    pub truncation: TruncationRule,
    /// Largest lag `H`.
    #[serde(default)]
    pub h_max: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit head length for population autocovariances.
    #[serde(default = "default_j_pop")]
    pub j_pop: usize,
    /// Convolution method; chosen from the problem size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ConvolutionMethod>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosenblattSpec {
    pub bins: usize,
    pub l: f64,
    /// Geometric bins left of `−L`.
    pub far_field: bool,
    pub far_ratio: f64,
    pub far_extent: f64,
    pub clamped: bool,
    /// Sampler draws; `run.replications` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
}

impl Default for RosenblattSpec {
    fn default() -> Self {
        let far = FarField::default();
        RosenblattSpec { bins: 1024, l: 50.0, far_field: true, far_ratio: far.ratio, far_extent: far.extent, clamped: false, replications: None }
    }
}

impl RosenblattSpec {
    pub fn params(&self) -> SpecialKernelParams {
        let far_field = self.far_field.then_some(FarField { ratio: self.far_ratio, extent: self.far_extent });
        SpecialKernelParams { bins: self.bins, l: self.l, far_field, clamped: self.clamped }
    }
}

/// Symmetric operator for `lift-check`, inline or as a JSON array file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_file: Option<PathBuf>,
}

impl LiftSpec {
    pub fn matrix(&self) -> Result<Array2<f64>> {
        let rows = match (&self.operator, &self.operator_file) {
            (Some(rows), None) => rows.clone(),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| LrdError::config(format!("cannot read operator file {}: {e}", path.display())))?;
                serde_json::from_str(&text)?
            }
            _ => return Err(LrdError::config("lift needs exactly one of operator, operator_file")),
        };
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(LrdError::config("lift operator must be a non-empty square matrix"));
        }
        Ok(Array2::from_shape_fn((m, m), |(i, j)| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Also write every scaled fluctuation or draw.
    pub write_samples: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: PathBuf::from("out"), write_samples: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub rosenblatt: RosenblattSpec,
    #[serde(default)]
    pub series: SigmaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift: Option<LiftSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads `.json` as JSON and anything else as TOML. Relative operator
    /// paths are resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LrdError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        if let Some(file) = cfg.lift.as_mut().and_then(|l| l.operator_file.as_mut()) {
            if file.is_relative() {
                if let Some(parent) = path.parent() {
                    *file = parent.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.run.n;
        if n.is_empty() {
            return Err(LrdError::config("run.n must list at least one sample size"));
        }
        if n[0] < 2 || n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LrdError::config("run.n must be strictly ascending with every N ≥ 2"));
        }
        if self.run.replications == 0 || self.rosenblatt.replications == Some(0) {
            return Err(LrdError::config("replications must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(LrdError::config("threads must be at least 1"));
        }
        if let Some(l) = &self.lift {
            if let Some(f) = &l.operator_file {
                if !f.exists() {
                    return Err(LrdError::config(format!("operator file {} does not exist", f.display())));
                }
            }
        }
        if self.task == Task::LiftCheck && self.lift.is_none() {
            return Err(LrdError::config("lift-check needs a [lift] block"));
        }
        Ok(())
    }
}

/// One comparison of a Monte Carlo estimate against a reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub n: Option<usize>,
    pub observed: Estimate,
    pub reference: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Comparison {
    fn new(name: impl Into<String>, n: Option<usize>, observed: Estimate, reference: f64, tolerance: f64) -> Self {
        let rel_error = (observed.value - reference).abs() / reference.abs();
        Comparison { name: name.into(), n, observed, reference, rel_error, tolerance, pass: rel_error <= tolerance }
    }
}

/// Statistics of `⟨sample, S⟩` for one test kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedStatistic {
    pub test_id: usize,
    pub moments: Moments,
    pub normality: Option<AndersonDarling>,
    /// `false` when the Anderson–Darling test cannot be applied (no spread).
    pub normality_applicable: bool,
}

/// A projection row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    /// `process` or `sampler`.
    pub source: String,
    pub n: Option<usize>,
    pub lag: usize,
    pub stat: ProjectedStatistic,
    /// Limit variance of the projection, when known.
    pub reference_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub metric: String,
    pub value: Estimate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// `(N, J)` per sample size; `J = None` for exact simulation.
    pub truncation: Vec<(usize, Option<usize>)>,
    /// Mean-square truncation bound at the smallest `J` used.
    pub truncation_bound: Option<f64>,
    /// Largest relative Σ series tail.
    pub series_tail: Option<f64>,
    /// `‖𝔣‖²` mass outside the special-kernel bins, per `(r, s)` maximum.
    pub kernel_tail: Option<f64>,
    /// `max |x_direct − x_lifted|`.
    pub lift_path_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub task: Task,
    pub seed: u64,
    pub threads: usize,
    pub profile_hash: String,
    pub tolerances: Tolerances,
    pub projections: Vec<ProjectionRow>,
    pub comparisons: Vec<Comparison>,
    pub convergence: Vec<ConvergenceRow>,
    pub budgets: Budgets,
    pub files: Vec<String>,
    pub notes: Vec<String>,
    pub timing_seconds: f64,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.comparisons.iter().all(|c| c.pass)
    }
}

/// Rank-one kernels `φ_a ⊗ φ_b`, `a, b < min(modes, m)`, from the cosine
/// modes `φ_k(i) ∝ cos(π k (i + ½) / m)` normalised in `L²(μ)`. The id of
/// `φ_a ⊗ φ_b` is `a·modes + b`.
pub fn cosine_test_kernels(grid: &GridSpace<f64>, modes: usize) -> Vec<(usize, KernelOnGrid<f64>)> {
    let m = grid.len();
    let w = grid.weights();
    let k = modes.min(m);
    let phi: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let v: Vec<f64> = (0..m).map(|i| (std::f64::consts::PI * a as f64 * (i as f64 + 0.5) / m as f64).cos()).collect();
            let norm = v.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            out.push((a * modes + b, KernelOnGrid::from_fn(m, |(i, j)| phi[a][i] * phi[b][j])));
        }
    }
    out
}

/// Moments and Anderson–Darling test of `⟨sample, S⟩` for every test kernel.
pub fn projected_statistics(
    samples: &[KernelOnGrid<f64>],
    test_kernels: &[(usize, KernelOnGrid<f64>)],
    grid: &GridSpace<f64>,
) -> Result<Vec<ProjectedStatistic>> {
    if samples.is_empty() || test_kernels.is_empty() {
        return Err(LrdError::config("projected statistics need samples and test kernels"));
    }
    test_kernels
        .iter()
        .map(|(id, s)| {
            let xs = samples.iter().map(|k| hs_inner_kernel(k, s, grid)).collect::<Result<Vec<f64>>>()?;
            let normality = anderson_darling(&xs);
            Ok(ProjectedStatistic { test_id: *id, moments: moments(&xs), normality_applicable: normality.is_some(), normality })
        })
        .collect()
}

enum Source {
    Convolution(PathSimulator<f64>),
    Exact(StationaryGaussian<f64>),
}

/// Path generator for one sample size.
struct PathSource {
    source: Source,
    n: usize,
    h_max: usize,
    seed: u64,
    j: Option<usize>,
    centre: Vec<KernelOnGrid<f64>>,
}

const FFT_THRESHOLD: usize = 1 << 20;

impl PathSource {
    fn new(model: &Model<f64>, run: &RunSpec, n: usize) -> Result<Self> {
        let h = run.h_max;
        let j = run.truncation.resolve(n, &model.profile, &model.innovations)?;
        let (source, centre) = match j {
            None => {
                let sim = StationaryGaussian::new(&model.profile, &model.innovations, n + h, run.j_pop)?;
                let centre = (0..=h).map(|k| population_autocov(&model.profile, &model.innovations, k, run.j_pop)).collect::<Result<_>>()?;
                (Source::Exact(sim), centre)
            }
            Some(j) => {
                let method = run.method.unwrap_or(if (n + h) * j > FFT_THRESHOLD { ConvolutionMethod::Fft } else { ConvolutionMethod::Direct });
                let cfg = ProcessConfig::new(model.profile.clone(), model.innovations.clone(), n, j, run.seed)
                    .with_h_max(h)
                    .with_method(method);
                let centre =
                    (0..=h).map(|k| population_autocov_truncated(&model.profile, &model.innovations, k, j)).collect::<Result<_>>()?;
                (Source::Convolution(PathSimulator::new(cfg)?), centre)
            }
        };
        Ok(PathSource { source, n, h_max: h, seed: run.seed, j, centre })
    }

    fn path(&self, rep: u64) -> Result<SamplePath<f64>> {
        match &self.source {
            Source::Convolution(sim) => Ok(sim.replication(rep)),
            Source::Exact(sim) => {
                let mut rng = stream(self.seed, Purpose::Path, rep);
                sim.sample_path(&mut rng, self.n, self.h_max, self.seed)
            }
        }
    }

    /// `γ̂_h − γ_h` for `h = 0..=H`.
    fn fluctuation(&self, rep: u64) -> Result<Vec<KernelOnGrid<f64>>> {
        let est = sample_autocov(&self.path(rep)?, self.h_max)?;
        est.lags.iter().zip(&self.centre).map(|(a, b)| a.sub(b)).collect()
    }
}

/// Files produced by a run, flushed by the calling thread.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    fn put(&mut self, name: impl Into<String>, body: Vec<u8>) {
        self.files.insert(name.into(), body);
    }

    fn put_json<S: Serialize>(&mut self, name: impl Into<String>, value: &S) -> Result<()> {
        let mut body = serde_json::to_vec_pretty(value)?;
        body.push(b'\n');
        self.put(name, body);
        Ok(())
    }

    fn flush(self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (name, body) in self.files {
            write_atomic(&dir.join(&name), &body)?;
            names.push(name);
        }
        Ok(names)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, body: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| LrdError::Io(e.error))?;
    Ok(())
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

const PROJECTION_HEADER: &str = "source,n,lag,test_id,replications,mean,mean_se,variance,variance_se,skewness,skewness_se,excess_kurtosis,excess_kurtosis_se,ad_statistic,ad_p_value,reference_variance";

fn projections_csv(rows: &[ProjectionRow]) -> Vec<u8> {
    let mut s = String::from(PROJECTION_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.stat.moments;
        let (ad, p) = r.stat.normality.map(|a| (e(a.statistic), e(a.p_value))).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.source,
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            r.lag,
            r.stat.test_id,
            m.mean.replications,
            e(m.mean.value),
            e(m.mean.std_error),
            e(m.variance.value),
            e(m.variance.std_error),
            e(m.skewness.value),
            e(m.skewness.std_error),
            e(m.excess_kurtosis.value),
            e(m.excess_kurtosis.std_error),
            ad,
            p,
            r.reference_variance.map(e).unwrap_or_default()
        ));
    }
    s.into_bytes()
}

/// `replication,h,r_index,s_index,value` rows in the kernel layout.
fn kernels_csv(samples: &[Vec<KernelOnGrid<f64>>]) -> Vec<u8> {
    let mut s = String::from("replication,h,r_index,s_index,value\n");
    for (rep, lags) in samples.iter().enumerate() {
        for (h, k) in lags.iter().enumerate() {
            for ((r, c), v) in k.values.indexed_iter() {
                s.push_str(&format!("{rep},{h},{r},{c},{}\n", e(*v)));
            }
        }
    }
    s.into_bytes()
}

/// Runs the configured task and writes its files under `output.dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let threads = config.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LrdError::Resource(e.to_string()))?;
    let start = Instant::now();
    let (mut report, outputs) = pool.install(|| execute(config, threads))?;
    report.files = outputs.flush(&config.output.dir)?;
    report.timing_seconds = start.elapsed().as_secs_f64();
    let mut body = serde_json::to_vec_pretty(&report)?;
    body.push(b'\n');
    write_atomic(&config.output.dir.join("report.json"), &body)?;
    Ok(report)
}

fn execute(config: &ExperimentConfig, threads: usize) -> Result<(RunReport, Outputs)> {
    let model: Model<f64> = config.model.build()?;
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        task: config.task,
        seed: config.run.seed,
        threads,
        profile_hash: model.profile.hash_hex(),
        tolerances: config.tolerances,
        projections: Vec::new(),
        comparisons: Vec::new(),
        convergence: Vec::new(),
        budgets: Budgets::default(),
        files: Vec::new(),
        notes: Vec::new(),
        timing_seconds: 0.0,
    };
    let mut out = Outputs::default();
    match config.task {
        Task::Simulate => task_simulate(config, &model, &mut report, &mut out)?,
        Task::Autocov => task_autocov(config, &model, &mut report, &mut out)?,
        Task::VerifyClt => task_verify_clt(config, &model, &mut report, &mut out)?,
        Task::VerifyRosenblatt => task_verify_rosenblatt(config, &model, &mut report, &mut out)?,
        Task::RosenblattSample => task_rosenblatt_sample(config, &model, &mut report, &mut out)?,
        Task::KernelDistance => task_kernel_distance(config, &model, &mut report, &mut out)?,
        Task::LiftCheck => task_lift_check(config, &model, &mut report, &mut out)?,
    }
    if let Some(j) = report.budgets.truncation.iter().filter_map(|(_, j)| *j).min() {
        let sup = model.innovations.max_variance().sqrt();
        report.budgets.truncation_bound = Some(truncation_bound(&model.profile, j, sup)?);
    }
    Ok((report, out))
}

fn sidecar(model: &Model<f64>, n: usize, h_max: usize, scaling: Option<&str>) -> EstimateSidecar {
    EstimateSidecar {
        n,
        h_max,
        scaling: scaling.map(String::from),
        profile_hash: model.profile.hash_hex(),
        weights: "grid".into(),
    }
}

#[derive(Serialize)]
struct PathSidecar {
    n: usize,
    h_max: usize,
    j: Option<usize>,
    seed: u64,
    replications: usize,
    profile_hash: String,
}

fn task_simulate(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    let run = &config.run;
    for &n in &run.n {
        let src = PathSource::new(model, run, n)?;
        report.budgets.truncation.push((n, src.j));
        let paths = (0..run.replications as u64).into_par_iter().map(|rep| src.path(rep)).collect::<Result<Vec<_>>>()?;
        let mut s = String::from("replication,n,r_index,value\n");
        for (rep, p) in paths.iter().enumerate() {
            for (t, row) in p.x.rows().into_iter().enumerate() {
                for (r, v) in row.iter().enumerate() {
                    s.push_str(&format!("{rep},{},{r},{}\n", t + 1, e(*v)));
                }
            }
        }
        out.put(format!("path_N{n}.csv"), s.into_bytes());
        out.put_json(
            format!("path_N{n}.json"),
            &PathSidecar { n, h_max: run.h_max, j: src.j, seed: run.seed, replications: run.replications, profile_hash: model.profile.hash_hex() },
        )?;
    }
    Ok(())
}

fn task_autocov(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    let run = &config.run;
    for &n in &run.n {
        let src = PathSource::new(model, run, n)?;
        report.budgets.truncation.push((n, src.j));
        let fl = (0..run.replications as u64).into_par_iter().map(|rep| src.fluctuation(rep)).collect::<Result<Vec<_>>>()?;
        let est: Vec<Vec<KernelOnGrid<f64>>> =
            fl.iter().map(|lags| lags.iter().zip(&src.centre).map(|(a, b)| a.add(b)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        for h in 0..=run.h_max {
            let errs: Vec<f64> = fl.iter().map(|lags| lags[h].max_abs()).collect();
            report.convergence.push(ConvergenceRow { n, metric: format!("sup_error_lag{h}"), value: moments(&errs).mean });
        }
        out.put(format!("autocov_N{n}.csv"), kernels_csv(&est));
        out.put_json(format!("autocov_N{n}.json"), &sidecar(model, n, run.h_max, None))?;
    }
    Ok(())
}

fn task_verify_clt(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    if classify_regime(&model.profile) != Regime::First {
        return Err(LrdError::domain("verify-clt needs the first regime, max d < 1/4"));
    }
    let run = &config.run;
    let tests = cosine_test_kernels(&model.grid, TEST_MODES);
    let op = SigmaOperator::new(&model.grid, &model.profile, &model.innovations, run.h_max, config.series)?;
    let mut pairings = Vec::new();
    let mut reference = BTreeMap::new();
    let mut worst_tail = 0.0_f64;
    for h in 0..=run.h_max {
        for (id, s) in &tests {
            let p = op.pairing(h, h, s, s)?;
            worst_tail = worst_tail.max((p.tail_estimate / p.value).abs());
            reference.insert((h, *id), p.value);
            pairings.push((h, h, *id, *id, p));
        }
    }
    report.budgets.series_tail = Some(worst_tail);
    if worst_tail > config.tolerances.series_tail_rel {
        report.notes.push(format!("Σ series tail is {worst_tail:.2e} of the value (extrapolated, included)"));
    }
    let mut buf = Vec::new();
    write_pairings_csv(&pairings, &mut buf)?;
    out.put("pairings.csv", buf);
    for &n in &run.n {
        let src = PathSource::new(model, run, n)?;
        report.budgets.truncation.push((n, src.j));
        let root = (n as f64).sqrt();
        let fl = (0..run.replications as u64)
            .into_par_iter()
            .map(|rep| Ok(src.fluctuation(rep)?.into_iter().map(|k| k.scale(root)).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        for h in 0..=run.h_max {
            let lag: Vec<KernelOnGrid<f64>> = fl.iter().map(|l| l[h].clone()).collect();
            for stat in projected_statistics(&lag, &tests, &model.grid)? {
                let r = reference[&(h, stat.test_id)];
                let cmp = Comparison::new(format!("variance lag {h} test {}", stat.test_id), Some(n), stat.moments.variance, r, config.tolerances.clt_variance_rel);
                report.comparisons.push(cmp);
                if let Some(ad) = stat.normality {
                    let pass = ad.p_value > config.tolerances.normality_level;
                    report.comparisons.push(Comparison {
                        name: format!("normality lag {h} test {}", stat.test_id),
                        n: Some(n),
                        observed: Estimate { value: ad.p_value, std_error: 0.0, replications: run.replications },
                        reference: config.tolerances.normality_level,
                        rel_error: 0.0,
                        tolerance: config.tolerances.normality_level,
                        pass,
                    });
                }
                report.projections.push(ProjectionRow { source: "process".into(), n: Some(n), lag: h, stat, reference_variance: Some(r) });
            }
        }
        if config.output.write_samples {
            out.put(format!("fluct_N{n}.csv"), kernels_csv(&fl));
            out.put_json(format!("fluct_N{n}.json"), &sidecar(model, n, run.h_max, Some("sqrt_n")))?;
        }
    }
    out.put("projections.csv", projections_csv(&report.projections));
    Ok(())
}

/// Limit covariance tensor of `𝔯`, flattened `(i·m+j, k·m+l)`.
fn rosenblatt_covariance(spec: &RosenblattKernelSpec<f64>) -> Result<Array2<f64>> {
    let m = spec.m();
    let mut c = Array2::zeros((m * m, m * m));
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    c[(i * m + j, k * m + l)] = spec.covariance(i, j, k, l)?;
                }
            }
        }
    }
    Ok(c)
}

/// Largest grid for which the limit covariance tensor is tabulated.
pub const MAX_REFERENCE_M: usize = 12;

/// `Var⟨𝔯, S⟩ = Σ w_i w_j w_k w_l S_ij S_kl Cov(𝔯_ij, 𝔯_kl)`.
fn projected_variance(cov: &Array2<f64>, s: &KernelOnGrid<f64>, grid: &GridSpace<f64>) -> f64 {
    let m = s.dim();
    let w = grid.weights();
    let v: Vec<f64> = (0..m * m).map(|a| w[a / m] * w[a % m] * s.values[(a / m, a % m)]).collect();
    let mut acc = 0.0;
    for a in 0..m * m {
        for b in 0..m * m {
            acc += v[a] * cov[(a, b)] * v[b];
        }
    }
    acc
}

fn rosenblatt_setup(
    model: &Model<f64>,
    report: &mut RunReport,
) -> Result<(RosenblattKernelSpec<f64>, Vec<(usize, KernelOnGrid<f64>)>, BTreeMap<usize, f64>)> {
    let spec = RosenblattKernelSpec::new(model.profile.clone(), model.innovations.clone())?;
    let tests = cosine_test_kernels(&model.grid, TEST_MODES);
    let mut reference = BTreeMap::new();
    if spec.m() <= MAX_REFERENCE_M {
        let cov = rosenblatt_covariance(&spec)?;
        for (id, s) in &tests {
            reference.insert(*id, projected_variance(&cov, s, &model.grid));
        }
    } else {
        report.notes.push(format!("limit variances not tabulated for m > {MAX_REFERENCE_M}"));
    }
    Ok((spec, tests, reference))
}

fn sampler_rows(
    config: &ExperimentConfig,
    model: &Model<f64>,
    spec: &RosenblattKernelSpec<f64>,
    tests: &[(usize, KernelOnGrid<f64>)],
    reference: &BTreeMap<usize, f64>,
    report: &mut RunReport,
) -> Result<Vec<KernelOnGrid<f64>>> {
    let params = config.rosenblatt.params();
    let sampler = RosenblattSampler::new(spec, params)?;
    let count = config.rosenblatt.replications.unwrap_or(config.run.replications);
    let draws = sampler.sample_many(config.run.seed, count);
    let mut tail = 0.0_f64;
    let m = spec.m();
    for r in 0..m {
        for s in 0..m {
            let (dr, ds) = (spec.profile.at(r), spec.profile.at(s));
            tail = tail.max(sampler.kernel().distance_sq_to_f(dr, ds, r, s)?);
        }
    }
    report.budgets.kernel_tail = Some(tail);
    for stat in projected_statistics(&draws, tests, &model.grid)? {
        let r = reference.get(&stat.test_id).copied();
        report.projections.push(ProjectionRow { source: "sampler".into(), n: None, lag: 0, stat, reference_variance: r });
    }
    Ok(draws)
}

fn task_verify_rosenblatt(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    let (spec, tests, reference) = rosenblatt_setup(model, report)?;
    let run = &config.run;
    let tol = config.tolerances;
    for &n in &run.n {
        let src = PathSource::new(model, run, n)?;
        report.budgets.truncation.push((n, src.j));
        let fl = (0..run.replications as u64)
            .into_par_iter()
            .map(|rep| src.fluctuation(rep)?.iter().map(|k| xi_scale(k, &model.profile, n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        for h in 0..=run.h_max {
            let lag: Vec<KernelOnGrid<f64>> = fl.iter().map(|l| l[h].clone()).collect();
            for stat in projected_statistics(&lag, &tests, &model.grid)? {
                let r = reference.get(&stat.test_id).copied();
                if let Some(r) = r {
                    report.comparisons.push(Comparison::new(
                        format!("second moment lag {h} test {}", stat.test_id),
                        Some(n),
                        stat.moments.second_moment,
                        r,
                        tol.rosenblatt_rel,
                    ));
                }
                report.projections.push(ProjectionRow { source: "process".into(), n: Some(n), lag: h, stat, reference_variance: r });
            }
        }
        if config.output.write_samples {
            out.put(format!("fluct_N{n}.csv"), kernels_csv(&fl));
            out.put_json(format!("fluct_N{n}.json"), &sidecar(model, n, run.h_max, Some("xi")))?;
        }
    }
    let first_sampler = report.projections.len();
    sampler_rows(config, model, &spec, &tests, &reference, report)?;
    // sampler statistics against the process at the largest N, lag 0
    let n_top = *run.n.last().expect("validated");
    let sampled: Vec<ProjectionRow> = report.projections[first_sampler..].to_vec();
    for srow in &sampled {
        let prow = report
            .projections
            .iter()
            .find(|p| p.source == "process" && p.n == Some(n_top) && p.lag == 0 && p.stat.test_id == srow.stat.test_id)
            .cloned();
        if let Some(prow) = prow {
            let (a, b) = (&srow.stat.moments, &prow.stat.moments);
            let id = srow.stat.test_id;
            report.comparisons.push(Comparison::new(format!("sampler vs process variance test {id}"), Some(n_top), a.variance, b.variance.value, tol.rosenblatt_rel));
            report.comparisons.push(Comparison::new(format!("sampler vs process skewness test {id}"), Some(n_top), a.skewness, b.skewness.value, tol.rosenblatt_rel));
        }
        if let Some(r) = srow.reference_variance {
            report.comparisons.push(Comparison::new(format!("sampler second moment test {}", srow.stat.test_id), None, srow.stat.moments.second_moment, r, tol.rosenblatt_rel));
        }
    }
    out.put("projections.csv", projections_csv(&report.projections));
    Ok(())
}

#[derive(Serialize)]
struct SampleSidecar {
    bins: usize,
    total_bins: usize,
    l: f64,
    seed: u64,
    replications: usize,
    profile_hash: String,
    weights: &'static str,
}

fn task_rosenblatt_sample(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    let (spec, tests, reference) = rosenblatt_setup(model, report)?;
    let draws = sampler_rows(config, model, &spec, &tests, &reference, report)?;
    let nested: Vec<Vec<KernelOnGrid<f64>>> = draws.into_iter().map(|k| vec![k]).collect();
    let sampler_bins = config.rosenblatt.params().edges()?.len() - 1;
    out.put("rosenblatt_samples.csv", kernels_csv(&nested));
    out.put_json(
        "rosenblatt_samples.json",
        &SampleSidecar {
            bins: config.rosenblatt.bins,
            total_bins: sampler_bins,
            l: config.rosenblatt.l,
            seed: config.run.seed,
            replications: nested.len(),
            profile_hash: model.profile.hash_hex(),
            weights: "grid",
        },
    )?;
    out.put("projections.csv", projections_csv(&report.projections));
    Ok(())
}

fn task_kernel_distance(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    if classify_regime(&model.profile) != Regime::Second {
        return Err(LrdError::domain("kernel-distance needs the second regime, 1/4 < d < 1/2"));
    }
    let mut s = String::from("n,h,distance,discrete_sq,cross,limit_sq\n");
    for &n in &config.run.n {
        for h in 0..=config.run.h_max {
            let k = kernel_distance(&model.grid, &model.profile, &model.innovations, n, h)?;
            s.push_str(&format!("{n},{h},{},{},{},{}\n", e(k.distance), e(k.discrete_sq), e(k.cross), e(k.limit_sq)));
            report.convergence.push(ConvergenceRow {
                n,
                metric: format!("kernel_distance_lag{h}"),
                value: Estimate { value: k.distance, std_error: 0.0, replications: 0 },
            });
        }
    }
    out.put("kernel_distance.csv", s.into_bytes());
    Ok(())
}

#[derive(Serialize)]
struct ModelExport {
    operator: Vec<Vec<f64>>,
    eigenvectors: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    residual: f64,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Matrix-power paths beyond this length are not cross-checked.
pub const LIFT_DIRECT_N: usize = 64;
/// Truncation used by the cross-check when the run is exact.
pub const LIFT_DIRECT_J: usize = 256;

fn task_lift_check(config: &ExperimentConfig, model: &Model<f64>, report: &mut RunReport, out: &mut Outputs) -> Result<()> {
    let lift = build_model(&config.lift.as_ref().expect("validated").matrix()?)?;
    let ambient: InnovationModel<f64> = model.innovations.clone();
    let m = lift.dim();
    if ambient.dim() != m {
        return Err(LrdError::config(format!("model grid has {} sites but the operator is {m}×{m}", ambient.dim())));
    }
    report.notes.push("memory profile taken from the operator spectrum; model.d is not used".into());
    report.profile_hash = lift.profile()?.hash_hex();
    let run = &config.run;
    let eig = Model {
        grid: GridSpace::counting(m)?,
        profile: lift.profile()?,
        innovations: lift.eigen_innovations(&ambient)?,
    };
    if classify_regime(&eig.profile) != Regime::Second {
        return Err(LrdError::domain("lift-check needs every eigenvalue in (1/4, 1/2)"));
    }
    // matrix-power cross-check
    let n_direct = run.n[0].min(LIFT_DIRECT_N);
    let j_direct = run.truncation.resolve(n_direct, &eig.profile, &eig.innovations)?.unwrap_or(LIFT_DIRECT_J).min(4 * LIFT_DIRECT_J);
    let lifted = simulate_lifted(&lift, &ambient, n_direct, j_direct, run.seed)?;
    let diff = lifted.direct_max_diff;
    report.budgets.lift_path_diff = diff;
    if let Some(d) = diff {
        report.comparisons.push(Comparison {
            name: "direct vs lifted path".into(),
            n: Some(n_direct),
            observed: Estimate { value: d, std_error: 0.0, replications: 1 },
            reference: 0.0,
            rel_error: d,
            tolerance: config.tolerances.lift_path_abs,
            pass: d <= config.tolerances.lift_path_abs,
        });
    }
    let limit = limit_covariance(&lift, &ambient)?.second_moments();
    let mut s = String::from("n,i,j,replications,second_moment,second_moment_se,finite_n,limit\n");
    for &n in &run.n {
        let src = PathSource::new(&eig, run, n)?;
        report.budgets.truncation.push((n, src.j));
        let centre_x = lift_kernel(&src.centre[0], &lift)?;
        let fl = (0..run.replications as u64)
            .into_par_iter()
            .map(|rep| {
                let p = src.path(rep)?;
                let x = SamplePath { x: p.x.dot(&lift.u), eps: None, n, h_max: run.h_max, j: p.j, seed: p.seed };
                let g = sample_autocov(&x, 0)?.lags[0].sub(&centre_x)?;
                Ok(delta_scale(&[g], &lift, n)?.pop().expect("one lag"))
            })
            .collect::<Result<Vec<_>>>()?;
        let finite = if src.j.is_none() { Some(finite_n_covariance(&lift, &ambient, n, run.j_pop)?.second_moments()) } else { None };
        for i in 0..m {
            for j in 0..m {
                let vals: Vec<f64> = fl.iter().map(|k| k.values[(i, j)]).collect();
                let sm = moments(&vals).second_moment;
                let fin = finite.as_ref().map(|f| f[(i, j)]);
                s.push_str(&format!(
                    "{n},{i},{j},{},{},{},{},{}\n",
                    sm.replications,
                    e(sm.value),
                    e(sm.std_error),
                    fin.map(e).unwrap_or_default(),
                    e(limit[(i, j)])
                ));
                report.comparisons.push(Comparison::new(format!("second moment ({i},{j})"), Some(n), sm, limit[(i, j)], config.tolerances.lift_rel));
                if let Some(f) = fin {
                    report.convergence.push(ConvergenceRow { n, metric: format!("finite_n_ratio_{i}{j}"), value: Estimate { value: sm.value / f, std_error: sm.std_error / f, replications: sm.replications } });
                }
            }
        }
        if config.output.write_samples {
            let nested: Vec<Vec<KernelOnGrid<f64>>> = fl.into_iter().map(|k| vec![k]).collect();
            out.put(format!("lift_fluct_N{n}.csv"), kernels_csv(&nested));
        }
    }
    out.put("lift_moments.csv", s.into_bytes());
    out.put_json("lift_model.json", &ModelExport { operator: rows(&lift.t_op), eigenvectors: rows(&lift.u), eigenvalues: lift.d.clone(), residual: lift.residual })?;
    Ok(())
}

fn lift_kernel(k: &KernelOnGrid<f64>, model: &SelfAdjointModel) -> Result<KernelOnGrid<f64>> {
    KernelOnGrid::new(model.u.t().dot(&k.values).dot(&model.u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DSpec, GridSpec, SigmaSpec};

    fn config(task: Task, d: f64, m: usize, n: Vec<usize>, dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            task,
            model: ModelSpec { grid: GridSpec::Uniform(m), d: DSpec::Constant(d), sigma: SigmaSpec::IdentityScaled(1.0), law: "gaussian".into() },
            run: RunSpec { n, truncation: TruncationRule::Bound, h_max: 0, replications: 1, seed: 5, j_pop: DEFAULT_J_POP, method: None },
            output: OutputSpec { dir: dir.to_path_buf(), write_samples: false },
            tolerances: Tolerances::default(),
            rosenblatt: RosenblattSpec::default(),
            series: SigmaConfig::default(),
            lift: None,
            threads: Some(1),
        }
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
            let j = serde_json::to_string(&t).unwrap();
            assert_eq!(j, format!("\"{}\"", t.name()));
        }
        assert!("bogus".parse::<Task>().is_err());
    }

    #[test]
    fn config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Task::LiftCheck, 0.3, 2, vec![16, 32], dir.path());
        c.lift = Some(LiftSpec { operator: Some(vec![vec![0.35, 0.05], vec![0.05, 0.35]]), operator_file: None });
        c.run.truncation = TruncationRule::Fixed(64);
        c.series.lambda = crate::gaussian_limit::LambdaMode::MonteCarlo { draws: 1000, seed: 3 };
        c.rosenblatt.far_field = false;
        c.rosenblatt.replications = Some(9);
        let t = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&t).unwrap();
        assert_eq!(back, c);
        assert_eq!(ExperimentConfig::from_toml(&back.to_toml().unwrap()).unwrap(), back);
        let j = c.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&j).unwrap(), c);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            task = "simulate"
            [model]
            grid = { uniform = 2 }
            d = { constant = 0.1 }
            sigma = { identity_scaled = 1.0 }
            [run]
            n = [8]
            "#,
        )
        .unwrap();
        assert_eq!(c.run.replications, 1);
        assert_eq!(c.rosenblatt.l, 50.0);
        assert!(ExperimentConfig::from_toml("task = \"simulate\"\nfoo = 1").is_err());
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Task::Simulate, 0.1, 2, vec![16, 8], dir.path());
        assert!(matches!(c.validate(), Err(LrdError::Config(_))));
        c.run.n = vec![8];
        c.run.replications = 0;
        assert!(matches!(c.validate(), Err(LrdError::Config(_))));
        c.run.replications = 1;
        c.task = Task::LiftCheck;
        assert!(c.validate().is_err());
        c.lift = Some(LiftSpec { operator: None, operator_file: Some(dir.path().join("missing.json")) });
        assert!(matches!(c.validate(), Err(LrdError::Config(_))));
    }

    #[test]
    fn simulate_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(Task::Simulate, 0.1, 2, vec![8], dir.path());
        let rep = run(&c).unwrap();
        let body = std::fs::read_to_string(dir.path().join("path_N8.csv")).unwrap();
        assert_eq!(body.lines().count(), 1 + 16);
        assert!(dir.path().join("path_N8.json").exists());
        assert!(dir.path().join("report.json").exists());
        assert_eq!(rep.schema_version, SCHEMA_VERSION);
        let again = tempfile::tempdir().unwrap();
        let mut c2 = c.clone();
        c2.output.dir = again.path().to_path_buf();
        run(&c2).unwrap();
        assert_eq!(body, std::fs::read_to_string(again.path().join("path_N8.csv")).unwrap());
    }

    #[test]
    fn regime_mismatch_is_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(Task::VerifyClt, 0.4, 1, vec![16], dir.path());
        assert_eq!(run(&c).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn verify_clt_reports_sigma_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Task::VerifyClt, 0.1, 1, vec![256], dir.path());
        c.run.truncation = TruncationRule::Exact;
        c.run.replications = 400;
        let rep = run(&c).unwrap();
        let cmp = rep.comparisons.iter().find(|c| c.name.starts_with("variance")).unwrap();
        assert_eq!(cmp.observed.replications, 400);
        assert!(cmp.rel_error < 0.3, "{cmp:?}");
        let body = std::fs::read_to_string(dir.path().join("projections.csv")).unwrap();
        assert!(body.starts_with(PROJECTION_HEADER));
        assert!(dir.path().join("pairings.csv").exists());
    }

    #[test]
    fn zero_samples_have_no_normality_test() {
        let grid = GridSpace::uniform_unit(2).unwrap();
        let zeros = vec![KernelOnGrid::zeros(2); 30];
        let stats = projected_statistics(&zeros, &cosine_test_kernels(&grid, TEST_MODES), &grid).unwrap();
        assert_eq!(stats.len(), 4);
        for s in stats {
            assert!(!s.normality_applicable);
            assert_eq!(s.moments.mean.value, 0.0);
            assert_eq!(s.moments.variance.value, 0.0);
        }
        assert!(projected_statistics(&[], &cosine_test_kernels(&grid, 1), &grid).is_err());
    }

    #[test]
    fn cosine_kernels_orthonormal() {
        let grid = GridSpace::uniform_unit(6).unwrap();
        let t = cosine_test_kernels(&grid, TEST_MODES);
        assert_eq!(t.len(), 16);
        for (a, ka) in &t {
            for (b, kb) in &t {
                let ip = hs_inner_kernel(ka, kb, &grid).unwrap();
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_files() {
        let mut bodies = Vec::new();
        for threads in [1, 3] {
            let dir = tempfile::tempdir().unwrap();
            let mut c = config(Task::VerifyRosenblatt, 0.4, 2, vec![32], dir.path());
            c.run.truncation = TruncationRule::Fixed(64);
            c.run.replications = 40;
            c.rosenblatt = RosenblattSpec { bins: 24, l: 2.0, far_field: false, replications: Some(70), ..Default::default() };
            c.threads = Some(threads);
            run(&c).unwrap();
            bodies.push(std::fs::read(dir.path().join("projections.csv")).unwrap());
        }
        assert_eq!(bodies[0], bodies[1]);
    }

    #[test]
    fn lift_check_small() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Task::LiftCheck, 0.3, 2, vec![32], dir.path());
        let op = dir.path().join("op.json");
        std::fs::write(&op, "[[0.35, 0.05], [0.05, 0.35]]").unwrap();
        c.lift = Some(LiftSpec { operator: None, operator_file: Some(op) });
        c.run.truncation = TruncationRule::Exact;
        c.run.replications = 20;
        let rep = run(&c).unwrap();
        assert!(rep.budgets.lift_path_diff.unwrap() < 1e-8);
        assert!(dir.path().join("lift_moments.csv").exists());
        assert!(dir.path().join("lift_model.json").exists());
    }

    #[test]
    fn replication_order_does_not_change_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(Task::VerifyRosenblatt, 0.4, 2, vec![32], dir.path());
        let model: Model<f64> = c.model.build().unwrap();
        let mut run = c.run.clone();
        run.truncation = TruncationRule::Fixed(48);
        let src = PathSource::new(&model, &run, 32).unwrap();
        let forward: Vec<KernelOnGrid<f64>> = (0..30).map(|r| src.fluctuation(r).unwrap().remove(0)).collect();
        let mut order: Vec<u64> = (0..30).collect();
        order.reverse();
        order.swap(3, 17);
        let mut shuffled: Vec<(u64, KernelOnGrid<f64>)> = order.iter().map(|&r| (r, src.fluctuation(r).unwrap().remove(0))).collect();
        shuffled.sort_by_key(|(r, _)| *r);
        let shuffled: Vec<KernelOnGrid<f64>> = shuffled.into_iter().map(|(_, k)| k).collect();
        let tests = cosine_test_kernels(&model.grid, TEST_MODES);
        let a = projected_statistics(&forward, &tests, &model.grid).unwrap();
        let b = projected_statistics(&shuffled, &tests, &model.grid).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn config_round_trip_prop(
            task in 0usize..7,
            m in 1usize..5,
            d in 0.01f64..0.49,
            mut n in proptest::collection::vec(2usize..5000, 1..4),
            reps in 1usize..10_000,
            seed in proptest::prelude::any::<u64>(),
            fixed in proptest::option::of(1usize..1000),
        ) {
            n.sort_unstable();
            n.dedup();
            let dir = PathBuf::from("out");
            let mut c = config(Task::ALL[task], d, m, n, &dir);
            c.run.replications = reps;
            c.run.seed = seed;
            if let Some(j) = fixed {
                c.run.truncation = TruncationRule::Fixed(j);
            }
            let j = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
            proptest::prop_assert_eq!(&j, &c);
            // TOML integers are signed 64-bit
            c.run.seed = seed >> 1;
            let t = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            proptest::prop_assert_eq!(&t, &c);
            let j = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
            proptest::prop_assert_eq!(&j, &c);
        }
    }
}

//! Experiment harness: per-method runs on the training rows of synthetic
//! instances, lambda cross-validation on the held-out rows, and sweeps over
//! sizes, seeds and methods.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{soft_impute, CompletionConfig, MaskedMatrix};
use crate::error::{invalid_argument, invalid_input, Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::pipelines::{self, PipelineParams, RecoveryResult};
use crate::sparse::SparseVector;
use crate::synth::{generate_instance, ExperimentSpec, Instance};

/// Base of the default seed list `DEFAULT_SEED_BASE..DEFAULT_SEED_BASE + 20`.
pub const DEFAULT_SEED_BASE: u64 = 1000;
pub const DEFAULT_SEED_COUNT: usize = 20;
/// Default relative weights of single-point runs.
pub const DEFAULT_LAMBDA1: f64 = 0.1;
pub const DEFAULT_LAMBDA2: f64 = 0.3;
/// Points per lambda in the default cross-validation grids.
pub const DEFAULT_GRID_POINTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoStep,
    FourStep,
    AugmentedFourStep,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TwoStep, Method::FourStep, Method::AugmentedFourStep];

    pub fn name(self) -> &'static str {
        match self {
            Method::TwoStep => "two_step",
            Method::FourStep => "four_step",
            Method::AugmentedFourStep => "augmented_four_step",
        }
    }

    pub fn fit(self, input: &MaskedMatrix, y: &[f64], params: &PipelineParams) -> Result<RecoveryResult> {
        match self {
            Method::TwoStep => pipelines::two_step(input, y, params),
            Method::FourStep => pipelines::four_step(input, y, params),
            Method::AugmentedFourStep => pipelines::augmented_four_step(input, y, params),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "two_step" | "two" => Ok(Method::TwoStep),
            "four_step" | "four" => Ok(Method::FourStep),
            "augmented_four_step" | "augmented" => Ok(Method::AugmentedFourStep),
            other => Err(format!("unknown method `{other}` (expected two-step, four-step or augmented)")),
        }
    }
}

/// How grid values translate into the weights handed to the pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScale {
    /// Values are used as given.
    Absolute,
    /// `lambda1 = v * ||X0||_op` and `lambda2 = v * 2 ||X0^T y||_inf`, where
    /// `X0` is the zero-filled training matrix.
    Relative,
}

impl FromStr for LambdaScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "absolute" | "abs" => Ok(LambdaScale::Absolute),
            "relative" | "rel" => Ok(LambdaScale::Relative),
            other => Err(format!("unknown lambda scale `{other}` (expected absolute or relative)")),
        }
    }
}

/// Reference magnitudes for [`LambdaScale::Relative`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaReference {
    pub lambda1_unit: f64,
    pub lambda2_unit: f64,
}

impl LambdaReference {
    pub fn of(train: &MaskedMatrix, y_train: &[f64]) -> Result<Self> {
        let x0 = train.zero_filled();
        Ok(Self {
            lambda1_unit: linalg::operator_norm(x0)?,
            lambda2_unit: 2.0 * linalg::norm_inf(&x0.t_matvec(y_train)?),
        })
    }

    pub fn resolve(&self, scale: LambdaScale, v1: f64, v2: f64) -> (f64, f64) {
        match scale {
            LambdaScale::Absolute => (v1, v2),
            LambdaScale::Relative => (v1 * self.lambda1_unit, v2 * self.lambda2_unit),
        }
    }
}

/// `k` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || k == 0 {
        return Err(invalid_argument(format!("bad log grid [{lo}, {hi}] with {k} points")));
    }
    if k == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect())
}

/// Default relative grids.
pub fn default_lambda1_grid() -> Vec<f64> {
    log_grid(1e-3, 0.5, DEFAULT_GRID_POINTS).expect("valid grid")
}

pub fn default_lambda2_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, DEFAULT_GRID_POINTS).expect("valid grid")
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid_input(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// F1 score of an estimated support against the true one; 1 when both are empty.
pub fn support_f1(estimate: &[usize], truth: &[usize]) -> f64 {
    if estimate.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let hits = estimate.iter().filter(|i| truth.binary_search(i).is_ok()).count() as f64;
    2.0 * hits / (estimate.len() + truth.len()) as f64
}

/// Options shared by every run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Pipeline settings; `lambda1` and `lambda2` are overwritten per run.
    pub base: PipelineParams,
    /// Predict from completed test rows instead of the true ones.
    pub impute_test: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { base: PipelineParams::default(), impute_test: false }
    }
}

/// One fitted (method, instance, lambda pair). Field names are the report
/// schema in both JSON and CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub train_seconds_per_stage: BTreeMap<String, f64>,
    pub total_seconds: f64,
    /// `None` when the pipeline failed without an estimate.
    pub test_rmse: Option<f64>,
    pub converged: bool,
    pub support_f1: f64,
    pub error: Option<String>,
}

pub const RECORD_FIELDS: [&str; 12] = [
    "method",
    "m",
    "n",
    "seed",
    "lambda1",
    "lambda2",
    "train_seconds_per_stage",
    "total_seconds",
    "test_rmse",
    "converged",
    "support_f1",
    "error",
];

fn error_tag(e: &Error) -> String {
    match e {
        Error::EmptySupport(_) => "empty_support".into(),
        Error::InvalidInput(m) => format!("invalid_input: {m}"),
        Error::InvalidArgument(m) => format!("invalid_argument: {m}"),
        Error::DegenerateInput(m) => format!("degenerate_input: {m}"),
        Error::Factorization(m) => format!("factorization: {m}"),
        other => other.to_string(),
    }
}

/// Training view of an instance. Test rows never enter it.
pub fn training_data(instance: &Instance) -> (MaskedMatrix, Vec<f64>) {
    let train = instance.masked.select_rows(&instance.train_rows);
    let y = instance.train_rows.iter().map(|&i| instance.y[i]).collect();
    (train, y)
}

/// Test-side design and labels.
pub struct TestData {
    x: DenseMatrix,
    y: Vec<f64>,
}

impl TestData {
    pub fn of(instance: &Instance, impute: bool, lambda1: f64) -> Result<Self> {
        let x = if impute {
            let masked = instance.masked.select_rows(&instance.test_rows);
            soft_impute(&masked, &CompletionConfig::accurate(lambda1))?.completed
        } else {
            instance.x_true.select_rows(&instance.test_rows)
        };
        let y = instance.test_rows.iter().map(|&i| instance.y[i]).collect();
        Ok(Self { x, y })
    }

    pub fn rmse(&self, beta: &SparseVector) -> Result<f64> {
        rmse(&self.x.matvec(beta.as_slice())?, &self.y)
    }
}

fn record_from(
    instance: &Instance,
    method: Method,
    lambdas: (f64, f64),
    outcome: Result<RecoveryResult>,
    test: Result<&TestData, &Error>,
) -> MethodRecord {
    let spec = &instance.spec;
    let truth = instance.beta_true.support();
    let mut record = MethodRecord {
        method,
        m: spec.m,
        n: spec.n,
        seed: spec.seed,
        lambda1: lambdas.0,
        lambda2: lambdas.1,
        train_seconds_per_stage: BTreeMap::new(),
        total_seconds: 0.0,
        test_rmse: None,
        converged: false,
        support_f1: 0.0,
        error: None,
    };
    let (fit, error) = match outcome {
        Ok(fit) => (Some(fit), None),
        // The support phase's estimate is all zeros; it still predicts.
        Err(Error::EmptySupport(partial)) => (Some(*partial), Some("empty_support".to_string())),
        Err(e) => (None, Some(error_tag(&e))),
    };
    if let Some(fit) = fit {
        record.total_seconds = fit.total_seconds();
        record.support_f1 = support_f1(&fit.beta_hat.support(), &truth);
        record.converged = fit.converged && error.is_none();
        match test {
            Ok(test) => match test.rmse(&fit.beta_hat) {
                Ok(v) => record.test_rmse = Some(v),
                Err(e) => record.error = Some(error_tag(&e)),
            },
            Err(e) => record.error = Some(error_tag(e)),
        }
        record.train_seconds_per_stage = fit.stage_times;
    }
    if error.is_some() {
        record.error = error;
        record.converged = false;
    }
    record
}

/// Fits `method` on the training rows with absolute weights `params.lambda1`
/// and `params.lambda2` and scores it on the test rows. Pipeline failures are
/// reported in the record.
pub fn run_method(instance: &Instance, method: Method, params: &PipelineParams, impute_test: bool) -> MethodRecord {
    let (train, y_train) = training_data(instance);
    let outcome = method.fit(&train, &y_train, params);
    let test = TestData::of(instance, impute_test, params.lambda1);
    record_from(instance, method, (params.lambda1, params.lambda2), outcome, test.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    /// Grid value before scaling.
    pub grid_lambda1: f64,
    pub grid_lambda2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub test_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub method: Method,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub points: Vec<CvPoint>,
    pub best_lambda1: f64,
    pub best_lambda2: f64,
    pub best_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub curve: CvCurve,
    pub records: Vec<MethodRecord>,
}

/// Evaluates every `(lambda1, lambda2)` grid pair on the held-out rows. Ties
/// in test RMSE go to the larger `lambda2`, then the larger `lambda1`.
pub fn cross_validate_instance(
    instance: &Instance,
    method: Method,
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    scale: LambdaScale,
    options: &RunOptions,
) -> Result<CvOutcome> {
    if lambda1_grid.is_empty() || lambda2_grid.is_empty() {
        return Err(invalid_argument("lambda grids must be non-empty"));
    }
    let (train, y_train) = training_data(instance);
    let reference = match scale {
        LambdaScale::Absolute => LambdaReference { lambda1_unit: 1.0, lambda2_unit: 1.0 },
        LambdaScale::Relative => LambdaReference::of(&train, &y_train)?,
    };

    let mut records = Vec::with_capacity(lambda1_grid.len() * lambda2_grid.len());
    let mut points = Vec::with_capacity(records.capacity());
    for &g1 in lambda1_grid {
        let (lambda1, _) = reference.resolve(scale, g1, 0.0);
        let lambda2s: Vec<f64> = lambda2_grid.iter().map(|&g2| reference.resolve(scale, g1, g2).1).collect();
        let params = PipelineParams { lambda1, lambda2: lambda2s[0], ..options.base };
        let test = TestData::of(instance, options.impute_test, lambda1);
        let outcomes: Vec<Result<RecoveryResult>> = match method {
            Method::TwoStep => match pipelines::two_step_path(&train, &y_train, &params, &lambda2s) {
                Ok(path) => path,
                Err(e) => {
                    let tag = error_tag(&e);
                    lambda2s.iter().map(|_| Err(Error::InvalidInput(tag.clone()))).collect()
                }
            },
            _ => lambda2s
                .iter()
                .map(|&lambda2| method.fit(&train, &y_train, &PipelineParams { lambda2, ..params }))
                .collect(),
        };
        for ((outcome, &lambda2), &g2) in outcomes.into_iter().zip(&lambda2s).zip(lambda2_grid) {
            let record = record_from(instance, method, (lambda1, lambda2), outcome, test.as_ref());
            points.push(CvPoint {
                grid_lambda1: g1,
                grid_lambda2: g2,
                lambda1,
                lambda2,
                test_rmse: record.test_rmse,
                error: record.error.clone(),
            });
            records.push(record);
        }
    }

    let best = points
        .iter()
        .filter_map(|p| p.test_rmse.filter(|v| v.is_finite()).map(|v| (v, p)))
        .min_by(|(a, pa), (b, pb)| {
            a.total_cmp(b)
                .then(pb.lambda2.total_cmp(&pa.lambda2))
                .then(pb.lambda1.total_cmp(&pa.lambda1))
        });
    let Some((best_rmse, best)) = best else {
        return Err(Error::AllFailed(
            points
                .iter()
                .map(|p| {
                    format!(
                        "lambda1={} lambda2={}: {}",
                        p.lambda1,
                        p.lambda2,
                        p.error.as_deref().unwrap_or("no finite rmse")
                    )
                })
                .collect(),
        ));
    };
    let spec = &instance.spec;
    let curve = CvCurve {
        method,
        m: spec.m,
        n: spec.n,
        seed: spec.seed,
        best_lambda1: best.lambda1,
        best_lambda2: best.lambda2,
        best_rmse,
        points: points.clone(),
    };
    Ok(CvOutcome { curve, records })
}

/// [`cross_validate_instance`] on a freshly generated instance.
pub fn cross_validate(
    spec: &ExperimentSpec,
    method: Method,
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    scale: LambdaScale,
    options: &RunOptions,
) -> Result<CvOutcome> {
    let instance = generate_instance(spec)?;
    cross_validate_instance(&instance, method, lambda1_grid, lambda2_grid, scale, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize)>,
    /// `None` uses `min(m, n) / 5`.
    pub rank: Option<usize>,
    pub sparsity: usize,
    pub alpha_obs: f64,
    pub noise_sigma: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    pub lambda_scale: LambdaScale,
    pub options: RunOptions,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![(500, 200), (2000, 200), (2000, 500), (1000, 200), (3000, 500)],
            rank: None,
            sparsity: 15,
            alpha_obs: 0.5,
            noise_sigma: 1.0,
            seeds: (DEFAULT_SEED_BASE..DEFAULT_SEED_BASE + DEFAULT_SEED_COUNT as u64).collect(),
            methods: Method::ALL.to_vec(),
            lambda1_grid: vec![DEFAULT_LAMBDA1],
            lambda2_grid: vec![DEFAULT_LAMBDA2],
            lambda_scale: LambdaScale::Relative,
            options: RunOptions::default(),
            workers: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(invalid_argument("no sizes given"));
        }
        if self.seeds.is_empty() {
            return Err(invalid_argument("no seeds given"));
        }
        if self.methods.is_empty() {
            return Err(invalid_argument("no methods given"));
        }
        if self.lambda1_grid.is_empty() || self.lambda2_grid.is_empty() {
            return Err(invalid_argument("lambda grids must be non-empty"));
        }
        if self.workers == 0 {
            return Err(invalid_argument("workers must be >= 1"));
        }
        for spec in self.specs() {
            spec.validate()?;
        }
        self.options.base.validate()
    }

    pub fn spec(&self, (m, n): (usize, usize), seed: u64) -> ExperimentSpec {
        let defaults = ExperimentSpec::new(m, n, seed);
        ExperimentSpec {
            r: self.rank.unwrap_or(defaults.r),
            s: self.sparsity,
            alpha_obs: self.alpha_obs,
            noise_sigma: self.noise_sigma,
            ..defaults
        }
    }

    fn specs(&self) -> impl Iterator<Item = ExperimentSpec> + '_ {
        self.sizes.iter().flat_map(move |&size| self.seeds.iter().map(move |&seed| self.spec(size, seed)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub workers: usize,
    pub config: BenchConfig,
    pub records: Vec<MethodRecord>,
    /// One curve per (size, seed, method) when a grid has more than one point.
    pub cv_curves: Vec<CvCurve>,
    /// Instances that could not be generated or scored.
    pub failures: Vec<String>,
}

impl BenchmarkReport {
    /// Records that produced a test RMSE.
    pub fn succeeded(&self) -> impl Iterator<Item = &MethodRecord> {
        self.records.iter().filter(|r| r.test_rmse.is_some())
    }
}

/// Runs every (size, seed, method) task, in parallel up to `cfg.workers`.
/// Records come back in task order whatever the scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let tasks: Vec<(ExperimentSpec, Method)> = cfg
        .specs()
        .flat_map(|spec| cfg.methods.iter().map(move |&method| (spec, method)))
        .collect();
    let with_curve = cfg.lambda1_grid.len() * cfg.lambda2_grid.len() > 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid_argument(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let outcomes: Vec<(ExperimentSpec, Method, Result<CvOutcome>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(spec, method)| {
                let outcome = cross_validate(
                    &spec,
                    method,
                    &cfg.lambda1_grid,
                    &cfg.lambda2_grid,
                    cfg.lambda_scale,
                    &cfg.options,
                );
                (spec, method, outcome)
            })
            .collect()
    });

    let mut report = BenchmarkReport {
        workers: cfg.workers,
        config: cfg.clone(),
        records: Vec::new(),
        cv_curves: Vec::new(),
        failures: Vec::new(),
    };
    for (spec, method, outcome) in outcomes {
        match outcome {
            Ok(cv) => {
                report.records.extend(cv.records);
                if with_curve {
                    report.cv_curves.push(cv.curve);
                }
            }
            Err(e) => report.failures.push(format!("{method} {}x{} seed {}: {e}", spec.m, spec.n, spec.seed)),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

/// One header row then one row per record. `train_seconds_per_stage` is a
/// JSON object inside its cell; missing values are empty cells.
pub fn records_to_csv(records: &[MethodRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_FIELDS)?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.lambda1.to_string(),
            r.lambda2.to_string(),
            serde_json::to_string(&r.train_seconds_per_stage)?,
            r.total_seconds.to_string(),
            r.test_rmse.map(|v| v.to_string()).unwrap_or_default(),
            r.converged.to_string(),
            r.support_f1.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_records(records: &[MethodRecord], path: &Path) -> Result<()> {
    Ok(fs::write(path, records_to_csv(records)?)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    Ok(fs::write(path, serde_json::to_string_pretty(value)?)?)
}

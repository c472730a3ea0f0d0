use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lrsparse::bench::{
    self, BenchConfig, LambdaReference, LambdaScale, Method, MethodRecord, ReportFormat, RunOptions,
};
use lrsparse::completion::{soft_impute_trace, CompletionConfig};
use lrsparse::diagnostics::{run_bound_audit, AuditParams};
use lrsparse::pipelines::{PipelineParams, SparseSolver};
use lrsparse::synth::{self, ExperimentSpec, Instance};
use lrsparse::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "lrsparse", version, about = "Sparse recovery with a partially observed low-rank design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance to a directory.
    Generate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one method on one instance and score it on the held-out rows.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "four-step")]
        method: Method,
        #[arg(long, default_value_t = 0.1)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.3)]
        lambda2: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Cross-validate both lambdas for one or more methods.
    Cv {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated; defaults to all three methods.
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        /// Comma-separated grid; defaults to a 15-point log grid.
        #[arg(long, value_delimiter = ',')]
        lambda1_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lambda2_grid: Vec<f64>,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep sizes, seeds and methods.
    Bench {
        /// Comma-separated `MxN` sizes.
        #[arg(long, value_delimiter = ',', default_value = "500x200,2000x200,2000x500,1000x200,3000x500")]
        sizes: Vec<Size>,
        /// Defaults to `min(m, n) / 5` per size.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 15)]
        sparsity: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha_obs: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        /// Comma-separated seeds or a half-open range `a..b`.
        #[arg(long, default_value = "1000..1020")]
        seeds: Seeds,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        lambda1_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.3")]
        lambda2_grid: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Audit the recovery error bounds along a Soft-Impute trace.
    Diagnose {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Nuclear-norm weight of the traced completion.
        #[arg(long, default_value_t = 0.1)]
        lambda1: f64,
        /// LASSO weight used on every iterate.
        #[arg(long, default_value_t = 0.3)]
        lambda2: f64,
        #[arg(long, default_value = "relative")]
        lambda_scale: LambdaScale,
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args, Clone)]
struct InstanceArgs {
    #[arg(long, default_value_t = 500)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Defaults to `min(m, n) / 5`.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 15)]
    sparsity: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha_obs: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InstanceArgs {
    fn spec(&self) -> ExperimentSpec {
        let defaults = ExperimentSpec::new(self.m, self.n, self.seed);
        ExperimentSpec {
            r: self.rank.unwrap_or(defaults.r),
            s: self.sparsity,
            alpha_obs: self.alpha_obs,
            noise_sigma: self.noise_sigma,
            ..defaults
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Read the instance from a directory written by `generate` instead of generating one.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    instance: InstanceArgs,
}

impl SourceArgs {
    fn load(&self) -> lrsparse::Result<Instance> {
        match &self.input {
            Some(dir) => synth::read_instance(dir),
            None => synth::generate_instance(&self.instance.spec()),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Solver of the final sparse step.
    #[arg(long, default_value = "imat")]
    solver: SparseSolver,
    /// Solver of the support-estimation step.
    #[arg(long, default_value = "lasso")]
    support_solver: SparseSolver,
    /// `relative` scales lambda1 by the operator norm and lambda2 by
    /// `2 ||X^T y||_inf` of the zero-filled training data.
    #[arg(long, default_value = "relative")]
    lambda_scale: LambdaScale,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha_stop: Option<f64>,
    /// Predict from completed test rows instead of the true ones.
    #[arg(long)]
    impute_test: bool,
}

impl FitArgs {
    fn options(&self) -> RunOptions {
        let defaults = PipelineParams::default();
        RunOptions {
            base: PipelineParams {
                final_solver: self.solver,
                support_solver: self.support_solver,
                epsilon: self.epsilon.unwrap_or(defaults.epsilon),
                alpha_stop: self.alpha_stop.unwrap_or(defaults.alpha_stop),
                ..defaults
            },
            impute_test: self.impute_test,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Clone, Copy)]
struct Size(usize, usize);

impl std::str::FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, n) = s.split_once(['x', 'X']).ok_or_else(|| format!("size `{s}` is not MxN"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("size `{s}`: {e}"));
        Ok(Size(parse(m)?, parse(n)?))
    }
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

impl std::str::FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("seed `{v}`: {e}"));
        if let Some((a, b)) = s.split_once("..") {
            return Ok(Seeds((parse(a)?..parse(b)?).collect()));
        }
        s.split(',').map(parse).collect::<Result<_, _>>().map(Seeds)
    }
}

fn emit(text: &str, out: Option<&Path>) -> lrsparse::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> lrsparse::Result<()> {
    emit(&serde_json::to_string_pretty(value)?, out)
}

fn emit_report<T: Serialize>(value: &T, records: &[MethodRecord], output: &OutputArgs) -> lrsparse::Result<()> {
    match output.format {
        ReportFormat::Json => emit_json(value, output.out.as_deref()),
        ReportFormat::Csv => emit(&bench::records_to_csv(records)?, output.out.as_deref()),
    }
}

fn or_default(grid: Vec<f64>, default: fn() -> Vec<f64>) -> Vec<f64> {
    if grid.is_empty() {
        default()
    } else {
        grid
    }
}

fn or_all(methods: Vec<Method>) -> Vec<Method> {
    if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods
    }
}

#[derive(Serialize)]
struct CvReport {
    curves: Vec<bench::CvCurve>,
    records: Vec<MethodRecord>,
}

/// Ok(false) signals a sweep in which nothing succeeded.
fn execute(command: Command) -> lrsparse::Result<bool> {
    match command {
        Command::Generate { instance, out } => {
            let generated = synth::generate_instance(&instance.spec())?;
            synth::write_instance(&generated, &out)?;
            eprintln!("wrote {}", out.display());
            Ok(true)
        }
        Command::Run { source, method, lambda1, lambda2, fit, output } => {
            let instance = source.load()?;
            let options = fit.options();
            let (train, y_train) = bench::training_data(&instance);
            let reference = LambdaReference::of(&train, &y_train)?;
            let (lambda1, lambda2) = reference.resolve(fit.lambda_scale, lambda1, lambda2);
            let params = PipelineParams { lambda1, lambda2, ..options.base };
            params.validate()?;
            let record = bench::run_method(&instance, method, &params, options.impute_test);
            let ok = record.test_rmse.is_some();
            emit_report(&record, std::slice::from_ref(&record), &output)?;
            Ok(ok)
        }
        Command::Cv { source, method, lambda1_grid, lambda2_grid, fit, output } => {
            let instance = source.load()?;
            let options = fit.options();
            options.base.validate()?;
            let grid1 = or_default(lambda1_grid, bench::default_lambda1_grid);
            let grid2 = or_default(lambda2_grid, bench::default_lambda2_grid);
            let mut report = CvReport { curves: Vec::new(), records: Vec::new() };
            let mut all_ok = true;
            for method in or_all(method) {
                match bench::cross_validate_instance(&instance, method, &grid1, &grid2, fit.lambda_scale, &options) {
                    Ok(cv) => {
                        report.curves.push(cv.curve);
                        report.records.extend(cv.records);
                    }
                    Err(Error::AllFailed(points)) => {
                        eprintln!("{method}: every grid point failed");
                        for p in points {
                            eprintln!("  {p}");
                        }
                        all_ok = false;
                    }
                    Err(e) => return Err(e),
                }
            }
            emit_report(&report, &report.records, &output)?;
            Ok(all_ok)
        }
        Command::Bench {
            sizes,
            rank,
            sparsity,
            alpha_obs,
            noise_sigma,
            seeds,
            method,
            lambda1_grid,
            lambda2_grid,
            workers,
            fit,
            output,
        } => {
            let cfg = BenchConfig {
                sizes: sizes.iter().map(|s| (s.0, s.1)).collect(),
                rank,
                sparsity,
                alpha_obs,
                noise_sigma,
                seeds: seeds.0,
                methods: or_all(method),
                lambda1_grid,
                lambda2_grid,
                lambda_scale: fit.lambda_scale,
                options: fit.options(),
                workers,
            };
            let report = bench::run_benchmark(&cfg)?;
            for failure in &report.failures {
                eprintln!("{failure}");
            }
            let ok = report.succeeded().next().is_some();
            emit_report(&report, &report.records, &output)?;
            Ok(ok)
        }
        Command::Diagnose { instance, lambda1, lambda2, lambda_scale, c0, probes, output } => {
            let spec = instance.spec();
            let generated = synth::generate_instance(&spec)?;
            let reference = LambdaReference::of(&generated.masked, &generated.y)?;
            let (lambda1, lambda2) = reference.resolve(lambda_scale, lambda1, lambda2);
            let (_, trace) = soft_impute_trace(&generated.masked, &CompletionConfig::accurate(lambda1))?;
            let params = AuditParams { lambda_k: lambda2, c0, probes, seed: spec.seed, ..AuditParams::default() };
            let report = run_bound_audit(&generated, &trace, &params)?;
            match output.format {
                ReportFormat::Json => emit_json(&report, output.out.as_deref())?,
                ReportFormat::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    for row in &report.iterates {
                        w.serialize(row)?;
                    }
                    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                    emit(&String::from_utf8_lossy(&bytes), output.out.as_deref())?;
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ALL_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::InvalidInput(_) => ExitCode::from(EXIT_INVALID),
                Error::AllFailed(_) => ExitCode::from(EXIT_ALL_FAILED),
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}

//! End-to-end recovery strategies.
//!
//! * two-step: accurate completion of the whole matrix, then one sparse solve.
//! * four-step: cheap completion alternated with a sparse solve to estimate
//!   the support, then accurate completion of the support columns only,
//!   alternated with the final sparse solve.
//! * augmented four-step: as four-step, but every completion step works on
//!   `[X | X b]` (restricted to the support in the second phase) with the
//!   labels observed in the last column.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::completion::{soft_impute_from, Budget, CompletionConfig, MaskedMatrix};
use crate::error::{invalid_argument, invalid_input, Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::sparse::{self, ImatConfig, LassoConfig, SparseVector, DEFAULT_ZERO_TOL};

pub const STAGE_INIT: &str = "init";
pub const STAGE_MC1: &str = "mc1";
pub const STAGE_SUPPORT: &str = "support_recovery";
pub const STAGE_RESTRICT: &str = "restrict";
pub const STAGE_MC2: &str = "mc2";
pub const STAGE_FINAL: &str = "final_recovery";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseSolver {
    Lasso,
    Imatcs,
}

impl std::str::FromStr for SparseSolver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(Self::Lasso),
            "imat" | "imatcs" => Ok(Self::Imatcs),
            other => Err(format!("unknown solver `{other}` (expected lasso or imat)")),
        }
    }
}

/// Iteration cap and relative tolerance of one completion budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionLimits {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl CompletionLimits {
    pub fn for_budget(budget: Budget) -> Self {
        Self { max_iters: budget.default_max_iters(), rel_tol: budget.default_rel_tol() }
    }

    fn config(self, lambda1: f64, budget: Budget) -> CompletionConfig {
        CompletionConfig { lambda1, max_iters: self.max_iters, rel_tol: self.rel_tol, budget }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Outer stopping criterion of the support-estimation phase.
    pub epsilon: f64,
    /// Outer stopping criterion of the refinement phase, `alpha_stop < epsilon`.
    pub alpha_stop: f64,
    /// Nuclear-norm weight of every completion step.
    pub lambda1: f64,
    /// Sparsity weight of every sparse step.
    pub lambda2: f64,
    /// Solver used while estimating the support.
    pub support_solver: SparseSolver,
    /// Solver used for the final estimate.
    pub final_solver: SparseSolver,
    pub max_outer_iters: usize,
    pub quick: CompletionLimits,
    pub accurate: CompletionLimits,
    pub zero_tol: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            alpha_stop: 1e-4,
            lambda1: 0.0,
            lambda2: 0.0,
            support_solver: SparseSolver::Lasso,
            final_solver: SparseSolver::Imatcs,
            max_outer_iters: 50,
            quick: CompletionLimits::for_budget(Budget::Quick),
            accurate: CompletionLimits::for_budget(Budget::Accurate),
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

impl PipelineParams {
    pub fn with_lambdas(lambda1: f64, lambda2: f64) -> Self {
        Self { lambda1, lambda2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid_argument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.epsilon > 0.0) || !(self.alpha_stop > 0.0) {
            return Err(invalid_argument("epsilon and alpha_stop must be > 0"));
        }
        if self.alpha_stop >= self.epsilon {
            return Err(invalid_argument(format!(
                "alpha_stop ({}) must be smaller than epsilon ({})",
                self.alpha_stop, self.epsilon
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(invalid_argument("max_outer_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    /// Full-length estimate.
    pub beta_hat: SparseVector,
    pub support_estimate: Vec<usize>,
    /// Wall-clock seconds per stage.
    pub stage_times: BTreeMap<String, f64>,
    /// Outer iterations per phase.
    pub outer_iterations: Vec<usize>,
    /// Per phase, the completion objective after each outer iteration.
    pub objective_traces: Vec<Vec<f64>>,
    /// Per phase, `||b_k - b_{k+1}||_2` after each outer iteration.
    pub beta_changes: Vec<Vec<f64>>,
    /// Augmented pipeline only: `max_i |Z[i, last] - (X b)_i|` of each
    /// completion before the last column is reset to `X b`.
    pub augmented_column_residuals: Vec<f64>,
    pub converged: bool,
}

impl RecoveryResult {
    pub fn total_seconds(&self) -> f64 {
        self.stage_times.values().sum()
    }

    fn add_time(&mut self, stage: &str, seconds: f64) {
        *self.stage_times.entry(stage.to_string()).or_insert(0.0) += seconds;
    }

    fn empty(n: usize) -> Self {
        Self {
            beta_hat: SparseVector::zeros(n),
            support_estimate: Vec::new(),
            stage_times: BTreeMap::new(),
            outer_iterations: Vec::new(),
            objective_traces: Vec::new(),
            beta_changes: Vec::new(),
            augmented_column_residuals: Vec::new(),
            converged: true,
        }
    }
}

/// Confines a masked matrix to the given columns.
pub fn restrict_columns(input: &MaskedMatrix, support: &[usize]) -> Result<MaskedMatrix> {
    if support.is_empty() {
        return Err(invalid_argument("support is empty"));
    }
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_argument("support must be strictly ascending"));
    }
    if let Some(&last) = support.last() {
        if last >= input.cols() {
            return Err(invalid_argument(format!(
                "support index {last} out of range for {} columns",
                input.cols()
            )));
        }
    }
    Ok(input.select_columns(support))
}

/// Scatters `beta_s` into a length-`n` vector at the `support` positions.
pub fn embed_support(beta_s: &SparseVector, support: &[usize], n: usize) -> Result<SparseVector> {
    if beta_s.len() != support.len() {
        return Err(invalid_argument(format!(
            "{} coefficients for a support of size {}",
            beta_s.len(),
            support.len()
        )));
    }
    let mut entries = vec![0.0; n];
    for (&idx, &v) in support.iter().zip(&beta_s.entries) {
        if idx >= n {
            return Err(invalid_argument(format!("support index {idx} out of range for length {n}")));
        }
        entries[idx] = v;
    }
    Ok(SparseVector { entries, zero_tol: beta_s.zero_tol })
}

fn check_inputs(input: &MaskedMatrix, y: &[f64], params: &PipelineParams) -> Result<()> {
    params.validate()?;
    if input.rows() != y.len() {
        return Err(invalid_input(format!(
            "matrix has {} rows but y has length {}",
            input.rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid_input("labels contain non-finite values"));
    }
    if input.observed_count() == 0 {
        return Err(Error::DegenerateInput("mask has no observed entry".into()));
    }
    Ok(())
}

/// One sparse step on a completed design. LASSO is warm-started from `warm`;
/// IMATCS always runs its full schedule, floored at `step * lambda / 2`, the
/// level at which the LASSO with the same weight zeroes coefficients on an
/// orthonormal design.
fn sparse_step(
    solver: SparseSolver,
    design: &DenseMatrix,
    y: &[f64],
    lambda: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    sparse_step_gram(solver, &design.gram(), &design.t_matvec(y)?, lambda, warm)
}

fn sparse_step_gram(
    solver: SparseSolver,
    gram: &DenseMatrix,
    xty: &[f64],
    lambda: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match solver {
        SparseSolver::Lasso => Ok(sparse::lasso_gram(gram, xty, &LassoConfig::new(lambda), warm)?.beta),
        SparseSolver::Imatcs => {
            let op_sq = sparse::gram_operator_norm(gram)?;
            let step = if op_sq > 0.0 { 1.0 / op_sq } else { 1.0 };
            let cfg = ImatConfig { step: Some(step), tau_min: step * lambda / 2.0, ..ImatConfig::default() };
            Ok(sparse::imatcs_gram(gram, xty, op_sq, &cfg, None)?.beta.entries)
        }
    }
}

/// Output of one alternating phase.
struct PhaseOutcome {
    beta: Vec<f64>,
    outer_iterations: usize,
    objective_trace: Vec<f64>,
    beta_changes: Vec<f64>,
    column_residuals: Vec<f64>,
    converged: bool,
    completion_secs: f64,
    sparse_secs: f64,
    init_secs: f64,
}

struct PhaseSpec<'a> {
    completion: CompletionConfig,
    solver: SparseSolver,
    lambda2: f64,
    tolerance: f64,
    max_outer: usize,
    /// Complete `[X | X b]` with `y` observed in the last column.
    augmented: bool,
    y: &'a [f64],
}

/// Overwrites the last column of `z` with `fitted` and returns the largest
/// absolute change.
fn reset_last_column(z: &mut DenseMatrix, fitted: &[f64]) -> f64 {
    let cols = z.cols();
    let mut residual = 0.0f64;
    for (row, &f) in z.as_mut_slice().chunks_exact_mut(cols).zip(fitted) {
        residual = residual.max((row[cols - 1] - f).abs());
        row[cols - 1] = f;
    }
    residual
}

/// Block coordinate descent: fix `b`, complete; fix `X`, sparse solve; until
/// consecutive estimates differ by at most `tolerance`.
fn alternate(input: &MaskedMatrix, spec: &PhaseSpec<'_>) -> Result<PhaseOutcome> {
    let started = Instant::now();
    let y = spec.y;
    let n = input.cols();
    // b_0 = 0, b_1 = pinv(X_hat) y with unobserved entries zero-filled.
    let mut beta = linalg::least_squares(input.zero_filled(), y)?;
    let init_secs = started.elapsed().as_secs_f64();

    let target = if spec.augmented { input.with_observed_column(y)? } else { input.clone() };
    let mut warm: Option<DenseMatrix> = None;
    let mut out = PhaseOutcome {
        beta: Vec::new(),
        outer_iterations: 0,
        objective_trace: Vec::new(),
        beta_changes: Vec::new(),
        column_residuals: Vec::new(),
        converged: linalg::norm2(&beta) <= spec.tolerance,
        completion_secs: 0.0,
        sparse_secs: 0.0,
        init_secs,
    };

    while !out.converged && out.outer_iterations < spec.max_outer {
        let t = Instant::now();
        let completed = soft_impute_from(&target, &spec.completion, warm.as_ref(), |_, _| {})?;
        out.completion_secs += t.elapsed().as_secs_f64();
        out.objective_trace.push(completed.objective_trace.last().copied().unwrap_or(0.0));

        let t = Instant::now();
        let mut z = completed.completed;
        let design = if spec.augmented {
            z.select_columns(&(0..n).collect::<Vec<_>>())
        } else {
            z.clone()
        };
        let next = sparse_step(spec.solver, &design, y, spec.lambda2, Some(&beta))?;
        if spec.augmented {
            let fitted = design.matvec(&next)?;
            out.column_residuals.push(reset_last_column(&mut z, &fitted));
        }
        out.sparse_secs += t.elapsed().as_secs_f64();

        let change = linalg::dist2(&next, &beta);
        out.beta_changes.push(change);
        out.outer_iterations += 1;
        beta = next;
        warm = Some(z);
        out.converged = change <= spec.tolerance;
    }
    out.beta = beta;
    Ok(out)
}

/// Accurate completion of the full matrix followed by one sparse solve.
pub fn two_step(input: &MaskedMatrix, y: &[f64], params: &PipelineParams) -> Result<RecoveryResult> {
    check_inputs(input, y, params)?;
    let mut result = RecoveryResult::empty(input.cols());

    let t = Instant::now();
    let completion = soft_impute_from(
        input,
        &params.accurate.config(params.lambda1, Budget::Accurate),
        None,
        |_, _| {},
    )?;
    result.add_time(STAGE_MC2, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let beta = sparse_step(params.final_solver, &completion.completed, y, params.lambda2, None)?;
    result.add_time(STAGE_FINAL, t.elapsed().as_secs_f64());

    let beta_hat = SparseVector::with_tolerance(beta, params.zero_tol)?;
    result.support_estimate = beta_hat.support();
    result.beta_hat = beta_hat;
    result.outer_iterations = vec![1];
    result.objective_traces = vec![completion.objective_trace];
    result.converged = completion.converged;
    Ok(result)
}

/// [`two_step`] for several sparsity weights sharing one completion. Every
/// result is charged the full completion time.
pub fn two_step_path(
    input: &MaskedMatrix,
    y: &[f64],
    params: &PipelineParams,
    lambda2_grid: &[f64],
) -> Result<Vec<Result<RecoveryResult>>> {
    check_inputs(input, y, params)?;
    let t = Instant::now();
    let completion = soft_impute_from(
        input,
        &params.accurate.config(params.lambda1, Budget::Accurate),
        None,
        |_, _| {},
    )?;
    let completion_secs = t.elapsed().as_secs_f64();
    let gram = completion.completed.gram();
    let xty = completion.completed.t_matvec(y)?;

    Ok(lambda2_grid
        .iter()
        .map(|&lambda2| {
            PipelineParams { lambda2, ..*params }.validate()?;
            let mut result = RecoveryResult::empty(input.cols());
            result.add_time(STAGE_MC2, completion_secs);
            let t = Instant::now();
            let beta = sparse_step_gram(params.final_solver, &gram, &xty, lambda2, None)?;
            result.add_time(STAGE_FINAL, t.elapsed().as_secs_f64());
            let beta_hat = SparseVector::with_tolerance(beta, params.zero_tol)?;
            result.support_estimate = beta_hat.support();
            result.beta_hat = beta_hat;
            result.outer_iterations = vec![1];
            result.objective_traces = vec![completion.objective_trace.clone()];
            result.converged = completion.converged;
            Ok(result)
        })
        .collect())
}

pub fn four_step(input: &MaskedMatrix, y: &[f64], params: &PipelineParams) -> Result<RecoveryResult> {
    staged(input, y, params, false)
}

pub fn augmented_four_step(
    input: &MaskedMatrix,
    y: &[f64],
    params: &PipelineParams,
) -> Result<RecoveryResult> {
    staged(input, y, params, true)
}

fn staged(input: &MaskedMatrix, y: &[f64], params: &PipelineParams, augmented: bool) -> Result<RecoveryResult> {
    check_inputs(input, y, params)?;
    let n = input.cols();
    let mut result = RecoveryResult::empty(n);

    // Phase A: cheap completion alternated with the support solver.
    let phase_a = alternate(
        input,
        &PhaseSpec {
            completion: params.quick.config(params.lambda1, Budget::Quick),
            solver: params.support_solver,
            lambda2: params.lambda2,
            tolerance: params.epsilon,
            max_outer: params.max_outer_iters,
            augmented,
            y,
        },
    )?;
    result.add_time(STAGE_INIT, phase_a.init_secs);
    result.add_time(STAGE_MC1, phase_a.completion_secs);
    result.add_time(STAGE_SUPPORT, phase_a.sparse_secs);
    result.outer_iterations.push(phase_a.outer_iterations);
    result.objective_traces.push(phase_a.objective_trace);
    result.beta_changes.push(phase_a.beta_changes);
    result.converged = phase_a.converged;

    let phase_a_beta = SparseVector::with_tolerance(phase_a.beta, params.zero_tol)?;
    let support = phase_a_beta.support();
    if support.is_empty() {
        result.beta_hat = phase_a_beta;
        return Err(Error::EmptySupport(Box::new(result)));
    }

    let t = Instant::now();
    let restricted = restrict_columns(input, &support)?;
    result.add_time(STAGE_RESTRICT, t.elapsed().as_secs_f64());

    // Phase B: accurate completion on the support columns.
    let phase_b = alternate(
        &restricted,
        &PhaseSpec {
            completion: params.accurate.config(params.lambda1, Budget::Accurate),
            solver: params.final_solver,
            lambda2: params.lambda2,
            tolerance: params.alpha_stop,
            max_outer: params.max_outer_iters,
            augmented,
            y,
        },
    )?;
    result.add_time(STAGE_INIT, phase_b.init_secs);
    result.add_time(STAGE_MC2, phase_b.completion_secs);
    result.add_time(STAGE_FINAL, phase_b.sparse_secs);
    result.outer_iterations.push(phase_b.outer_iterations);
    result.objective_traces.push(phase_b.objective_trace);
    result.beta_changes.push(phase_b.beta_changes);
    result.augmented_column_residuals = phase_b.column_residuals;
    result.converged &= phase_b.converged;

    let beta_s = SparseVector::with_tolerance(phase_b.beta, params.zero_tol)?;
    result.beta_hat = embed_support(&beta_s, &support, n)?;
    result.support_estimate = support;
    Ok(result)
}

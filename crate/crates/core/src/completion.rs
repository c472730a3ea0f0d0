//! Soft-Impute matrix completion.
//!
//! Solves `min_X ||P_E(X - X_hat)||_F^2 + lambda ||X||_*` by iterating
//! `X <- svt(P_E(X_hat) + P_E_perp(X), lambda / 2)` from `X = 0`. The
//! quadratic term carries no 1/2, hence the halved threshold.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, invalid_input, Error, Result};
use crate::linalg::{self, DenseMatrix};

/// A dense matrix together with the set of entries that are actually known.
///
/// Unobserved positions hold 0 and are never read as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix {
    values: DenseMatrix,
    observed: Array2<bool>,
}

impl MaskedMatrix {
    /// Builds a masked matrix. Whatever `values` holds at unobserved positions
    /// is discarded, so those entries may be NaN.
    pub fn new(values: Array2<f64>, observed: Array2<bool>) -> Result<Self> {
        if values.dim() != observed.dim() {
            return Err(invalid_input(format!(
                "values {:?} and mask {:?} differ in shape",
                values.dim(),
                observed.dim()
            )));
        }
        let mut values = values;
        values.zip_mut_with(&observed, |v, &seen| {
            if !seen {
                *v = 0.0;
            }
        });
        Ok(Self { values: DenseMatrix::new(values)?, observed })
    }

    /// Row-major counterpart of [`MaskedMatrix::new`].
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        let shape_err = |what: &str, len: usize| invalid_input(format!("{what} has {len} entries, expected {rows}x{cols}"));
        let (vlen, olen) = (values.len(), observed.len());
        let values = Array2::from_shape_vec((rows, cols), values).map_err(|_| shape_err("values", vlen))?;
        let observed = Array2::from_shape_vec((rows, cols), observed).map_err(|_| shape_err("mask", olen))?;
        Self::new(values, observed)
    }

    pub fn fully_observed(values: DenseMatrix) -> Self {
        let observed = Array2::from_elem(values.shape(), true);
        Self { values, observed }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Observed values with zeros at unobserved positions.
    pub fn zero_filled(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[[row, col]]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / self.observed.len() as f64
    }

    pub fn select_rows(&self, rows: &[usize]) -> MaskedMatrix {
        Self {
            values: self.values.select_rows(rows),
            observed: self.observed.select(ndarray::Axis(0), rows),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> MaskedMatrix {
        Self {
            values: self.values.select_columns(cols),
            observed: self.observed.select(ndarray::Axis(1), cols),
        }
    }

    /// Appends a fully observed column.
    pub fn with_observed_column(&self, column: &[f64]) -> Result<MaskedMatrix> {
        if column.len() != self.rows() {
            return Err(invalid_input("appended column length differs from row count"));
        }
        let (m, n) = self.shape();
        let values = Array2::from_shape_fn((m, n + 1), |(i, j)| {
            if j < n {
                self.values.get(i, j)
            } else {
                column[i]
            }
        });
        let observed = Array2::from_shape_fn((m, n + 1), |(i, j)| j == n || self.observed[[i, j]]);
        Ok(Self { values: DenseMatrix::new(values)?, observed })
    }

    /// `sum over observed (i, j) of (x_ij - value_ij)^2`.
    pub fn observed_sq_error(&self, x: &DenseMatrix) -> f64 {
        x.as_slice()
            .iter()
            .zip(self.values.as_slice())
            .zip(self.observed.iter())
            .filter(|(_, &seen)| seen)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum()
    }

    /// `P_E(X_hat) + P_E_perp(x)`, written into `out`.
    fn fill_into(&self, x: &DenseMatrix, out: &mut DenseMatrix) {
        let dst = out.as_mut_slice();
        for (((d, &cur), &known), &seen) in dst
            .iter_mut()
            .zip(x.as_slice())
            .zip(self.values.as_slice())
            .zip(self.observed.iter())
        {
            *d = if seen { known } else { cur };
        }
    }
}

/// Accuracy/complexity trade-off of a completion run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Budget {
    /// Cheap first pass: 5 iterations, relative tolerance 1e-2.
    Quick,
    /// Accurate pass: 500 iterations, relative tolerance 1e-6.
    Accurate,
}

impl Budget {
    pub fn default_max_iters(self) -> usize {
        match self {
            Budget::Quick => 5,
            Budget::Accurate => 500,
        }
    }

    pub fn default_rel_tol(self) -> f64 {
        match self {
            Budget::Quick => 1e-2,
            Budget::Accurate => 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Nuclear-norm weight.
    pub lambda1: f64,
    pub max_iters: usize,
    /// Stop once `||X_{k+1} - X_k||_F / max(1, ||X_k||_F)` falls to this.
    pub rel_tol: f64,
    pub budget: Budget,
}

impl CompletionConfig {
    pub fn new(lambda1: f64, budget: Budget) -> Self {
        Self {
            lambda1,
            max_iters: budget.default_max_iters(),
            rel_tol: budget.default_rel_tol(),
            budget,
        }
    }

    pub fn quick(lambda1: f64) -> Self {
        Self::new(lambda1, Budget::Quick)
    }

    pub fn accurate(lambda1: f64) -> Self {
        Self::new(lambda1, Budget::Accurate)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(invalid_argument(format!("lambda1 must be >= 0, got {}", self.lambda1)));
        }
        if self.max_iters == 0 {
            return Err(invalid_argument("max_iters must be >= 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid_argument(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResult {
    pub completed: DenseMatrix,
    /// Objective value after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    /// Whether the relative-change criterion was met before the iteration cap.
    pub converged: bool,
    /// Number of singular values kept by the last shrinkage.
    pub rank: usize,
}

/// `||P_E(X - X_hat)||_F^2 + lambda ||X||_*`.
pub fn eval_objective(x: &DenseMatrix, input: &MaskedMatrix, lambda: f64) -> Result<f64> {
    x.check_same_shape(input.zero_filled())?;
    let nuclear = if lambda == 0.0 { 0.0 } else { linalg::nuclear_norm(x)? };
    Ok(input.observed_sq_error(x) + lambda * nuclear)
}

pub fn soft_impute(input: &MaskedMatrix, cfg: &CompletionConfig) -> Result<CompletionResult> {
    soft_impute_from(input, cfg, None, |_, _| {})
}

/// Budget-capped first pass (MC1).
pub fn quick_complete(input: &MaskedMatrix, lambda1: f64) -> Result<CompletionResult> {
    soft_impute(input, &CompletionConfig::quick(lambda1))
}

/// Runs Soft-Impute and also returns every iterate `X_1, ..., X_K`.
pub fn soft_impute_trace(
    input: &MaskedMatrix,
    cfg: &CompletionConfig,
) -> Result<(CompletionResult, Vec<DenseMatrix>)> {
    let mut iterates = Vec::new();
    let result = soft_impute_from(input, cfg, None, |_, x| iterates.push(x.clone()))?;
    Ok((result, iterates))
}

/// Soft-Impute starting from `init` (zero when `None`). `observer` sees each
/// iterate as it is produced.
pub fn soft_impute_from(
    input: &MaskedMatrix,
    cfg: &CompletionConfig,
    init: Option<&DenseMatrix>,
    mut observer: impl FnMut(usize, &DenseMatrix),
) -> Result<CompletionResult> {
    cfg.validate()?;
    if input.observed_count() == 0 {
        return Err(Error::DegenerateInput("mask has no observed entry".into()));
    }
    let (rows, cols) = input.shape();
    let mut x = match init {
        Some(start) => {
            start.check_same_shape(input.zero_filled())?;
            start.clone()
        }
        None => DenseMatrix::zeros(rows, cols),
    };
    let tau = cfg.lambda1 / 2.0;
    let mut filled = DenseMatrix::zeros(rows, cols);
    let mut objective_trace = Vec::with_capacity(cfg.max_iters.min(64));
    let mut converged = false;
    let mut rank = rows.min(cols);

    for k in 1..=cfg.max_iters {
        input.fill_into(&x, &mut filled);
        let step = linalg::shrink(&filled, tau)?;
        let objective = input.observed_sq_error(&step.matrix) + cfg.lambda1 * step.nuclear_norm;
        objective_trace.push(objective);

        let change = linalg::dist2(step.matrix.as_slice(), x.as_slice());
        let scale = x.frobenius_norm().max(1.0);
        x = step.matrix;
        rank = step.rank;
        observer(k, &x);

        // A zero objective is the global minimum.
        if change / scale <= cfg.rel_tol || objective == 0.0 {
            converged = true;
            break;
        }
    }

    let iterations_used = objective_trace.len();
    Ok(CompletionResult { completed: x, objective_trace, iterations_used, converged, rank })
}

//! Sparse recovery on a completed design: LASSO by cyclic coordinate descent
//! and IMATCS (iterative adaptive hard thresholding).
//!
//! The LASSO objective is `||X b - y||^2 + lambda ||b||_1` with no 1/2 in
//! front of the quadratic, so every soft threshold is `lambda / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, invalid_input, Result};
use crate::linalg::{self, DenseMatrix};

/// Default absolute tolerance below which a coefficient counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

/// A parameter vector whose support is read with an explicit tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<f64>,
    pub zero_tol: f64,
}

impl SparseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(entries, DEFAULT_ZERO_TOL)
    }

    pub fn with_tolerance(entries: Vec<f64>, zero_tol: f64) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input("sparse vector has non-finite entries"));
        }
        if !(zero_tol >= 0.0) {
            return Err(invalid_argument("zero_tol must be >= 0"));
        }
        Ok(Self { entries, zero_tol })
    }

    pub fn zeros(n: usize) -> Self {
        Self { entries: vec![0.0; n], zero_tol: DEFAULT_ZERO_TOL }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn support(&self) -> Vec<usize> {
        support(self)
    }

    pub fn norm2(&self) -> f64 {
        linalg::norm2(&self.entries)
    }
}

/// Indices `i` (0-based, ascending) with `|beta_i| > zero_tol`.
pub fn support(beta: &SparseVector) -> Vec<usize> {
    beta.entries
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > beta.zero_tol)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_sweeps: usize,
    /// Converged when the largest coordinate change in a sweep is at most
    /// `rel_tol * max_j |beta_j|`.
    pub rel_tol: f64,
}

impl LassoConfig {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, max_sweeps: 10_000, rel_tol: 1e-10 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid_argument(format!("lasso lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid_argument("lasso rel_tol must be > 0"));
        }
        if self.max_sweeps == 0 {
            return Err(invalid_argument("lasso max_sweeps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LassoOutcome {
    pub beta: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_design(x: &DenseMatrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(invalid_input(format!(
            "design has {} rows but y has length {}",
            x.rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid_input("labels contain non-finite values"));
    }
    Ok(())
}

/// `||X b - y||^2 + lambda ||b||_1`.
pub fn lasso_objective(x: &DenseMatrix, y: &[f64], beta: &[f64], lambda: f64) -> Result<f64> {
    let fitted = x.matvec(beta)?;
    let rss: f64 = fitted.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(rss + lambda * linalg::norm1(beta))
}

pub fn lasso(x: &DenseMatrix, y: &[f64], cfg: &LassoConfig) -> Result<SparseVector> {
    check_design(x, y)?;
    let gram = x.gram();
    let xty = x.t_matvec(y)?;
    let out = lasso_gram(&gram, &xty, cfg, None)?;
    Ok(SparseVector { entries: out.beta, zero_tol: DEFAULT_ZERO_TOL })
}

/// Cyclic coordinate descent on the covariance form (`G = X^T X`, `c = X^T y`).
/// Coordinates are visited in index order.
pub(crate) fn lasso_gram(
    gram: &DenseMatrix,
    xty: &[f64],
    cfg: &LassoConfig,
    init: Option<&[f64]>,
) -> Result<LassoOutcome> {
    cfg.validate()?;
    let n = xty.len();
    let g = gram.as_array();
    let mut beta = init.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut g_beta = vec![0.0; n];
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (gb, &gij) in g_beta.iter_mut().zip(g.row(j).iter()) {
                *gb += gij * b;
            }
        }
    }
    let half_lambda = cfg.lambda / 2.0;
    for _ in 0..cfg.max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..n {
            let gjj = g[[j, j]];
            let old = beta[j];
            let new = if gjj > 0.0 {
                let rho = xty[j] - (g_beta[j] - gjj * old);
                soft_threshold(rho, half_lambda) / gjj
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                // G is symmetric: row j equals column j.
                for (gb, &gij) in g_beta.iter_mut().zip(g.row(j).iter()) {
                    *gb += gij * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        let scale = linalg::norm_inf(&beta).max(f64::MIN_POSITIVE);
        if max_change <= cfg.rel_tol * scale {
            break;
        }
    }
    Ok(LassoOutcome { beta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImatConfig {
    /// Initial threshold. `None` uses `||X^T y||_inf`.
    pub tau0: Option<f64>,
    /// Geometric decay of the threshold per iteration, in (0, 1).
    pub decay: f64,
    /// Gradient step. `None` uses `1 / ||X||_op^2`.
    pub step: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Floor under the threshold schedule. Zero lets the schedule decay freely.
    pub tau_min: f64,
}

impl Default for ImatConfig {
    fn default() -> Self {
        Self { tau0: None, decay: 0.85, step: None, max_iters: 300, rel_tol: 1e-7, tau_min: 0.0 }
    }
}

impl ImatConfig {
    fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(invalid_argument(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if let Some(step) = self.step {
            if !(step > 0.0) || !step.is_finite() {
                return Err(invalid_argument(format!("step must be > 0, got {step}")));
            }
        }
        if let Some(tau0) = self.tau0 {
            if !(tau0 >= 0.0) || !tau0.is_finite() {
                return Err(invalid_argument(format!("tau0 must be >= 0, got {tau0}")));
            }
        }
        if !(self.tau_min >= 0.0) || !self.tau_min.is_finite() {
            return Err(invalid_argument("tau_min must be >= 0"));
        }
        if self.max_iters == 0 || !(self.rel_tol > 0.0) {
            return Err(invalid_argument("max_iters must be >= 1 and rel_tol > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImatResult {
    pub beta: SparseVector,
    pub iterations: usize,
    /// Threshold used at each iteration.
    pub thresholds: Vec<f64>,
    /// Number of nonzero entries after each iteration.
    pub support_sizes: Vec<usize>,
    /// Step actually used.
    pub step: f64,
    /// Set when `step * ||X||_op^2 >= 2`, where the gradient step may diverge.
    pub step_warning: bool,
    pub converged: bool,
}

pub fn imatcs(x: &DenseMatrix, y: &[f64], cfg: &ImatConfig) -> Result<ImatResult> {
    check_design(x, y)?;
    let gram = x.gram();
    let xty = x.t_matvec(y)?;
    let op_sq = gram_operator_norm(&gram)?;
    imatcs_gram(&gram, &xty, op_sq, cfg, None)
}

/// Squared operator norm of `X`, estimated by power iteration on its Gram
/// matrix. The estimate approaches the true value from below.
pub(crate) fn gram_operator_norm(gram: &DenseMatrix) -> Result<f64> {
    const MAX_ITERS: usize = 300;
    const REL_TOL: f64 = 1e-9;
    let n = gram.rows();
    // Irrational offsets keep the start away from any eigenvector's orthogonal complement.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_749_895).fract()).collect();
    let norm = linalg::norm2(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    let mut estimate = 0.0;
    for _ in 0..MAX_ITERS {
        let w = gram.matvec(&v)?;
        let next = linalg::norm2(&w);
        if next == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / next).collect();
        let done = (next - estimate).abs() <= REL_TOL * next;
        estimate = next;
        if done {
            break;
        }
    }
    Ok(estimate)
}

/// IMATCS on the covariance form. Iteration `k = 1, 2, ...` computes
/// `v = b + step (c - G b)` and keeps the entries with `|v_i| > tau_k`, where
/// `tau_k = max(tau0 * decay^k, tau_min)`. Stops once the schedule has reached
/// its floor and the relative change is at most `rel_tol`.
/// `op_sq` is the squared operator norm of `X`.
pub(crate) fn imatcs_gram(
    gram: &DenseMatrix,
    xty: &[f64],
    op_sq: f64,
    cfg: &ImatConfig,
    init: Option<&[f64]>,
) -> Result<ImatResult> {
    cfg.validate()?;
    let n = xty.len();
    let step = match cfg.step {
        Some(s) => s,
        None if op_sq > 0.0 => 1.0 / op_sq,
        None => 1.0,
    };
    let step_warning = step * op_sq >= 2.0;
    let tau0 = cfg.tau0.unwrap_or_else(|| linalg::norm_inf(xty));
    let g = gram.as_array();

    let mut beta = init.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut thresholds = Vec::new();
    let mut support_sizes = Vec::new();
    let mut converged = false;
    let mut next = vec![0.0; n];
    let mut scheduled = tau0;

    for _ in 0..cfg.max_iters {
        scheduled *= cfg.decay;
        let tau = scheduled.max(cfg.tau_min);
        thresholds.push(tau);
        for (i, out) in next.iter_mut().enumerate() {
            let g_beta: f64 = g.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            let v = beta[i] + step * (xty[i] - g_beta);
            *out = if v.abs() > tau { v } else { 0.0 };
        }
        support_sizes.push(next.iter().filter(|v| **v != 0.0).count());
        let change = linalg::dist2(&next, &beta);
        let scale = linalg::norm2(&beta).max(f64::MIN_POSITIVE);
        std::mem::swap(&mut beta, &mut next);
        if tau <= cfg.tau_min && change <= cfg.rel_tol * scale {
            converged = true;
            break;
        }
    }

    Ok(ImatResult {
        iterations: thresholds.len(),
        beta: SparseVector { entries: beta, zero_tol: DEFAULT_ZERO_TOL },
        thresholds,
        support_sizes,
        step,
        step_warning,
        converged,
    })
}

//! Numerical audit of the error analysis for sparse recovery on Soft-Impute
//! iterates.
//!
//! For iterates `X_1, ..., X_K` (with `X_K` standing in for the limit
//! `X_inf`) the audit tracks `sigma_D(k) = ||X_k - X_inf||_op`, the deviation
//! quantities
//!
//! * `dev_y     = ||(X_k - X_inf)^T y||_inf`
//! * `dev_gamma = ||(X_k^T X_k - X_inf^T X_inf) beta||_inf`
//!
//! their upper bounds `sigma_D ||y||_2` and `3 sigma_D (2 sigma_inf + sigma_D) ||beta||_2`,
//! and the l2/l1 error bounds on the LASSO estimate computed on each iterate.
//! Logarithms are natural.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, invalid_input, Result};
use crate::linalg::{self, DenseMatrix};
use crate::sparse::{self, LassoConfig, SparseVector};
use crate::synth::Instance;

/// Relative slack applied when comparing a computed quantity against an
/// upper bound that holds exactly in real arithmetic.
pub const ROUNDOFF_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub sigma_d: f64,
    pub sigma_inf: f64,
    pub y_norm: f64,
    pub b0: f64,
    pub s: usize,
    pub m: usize,
    pub n: usize,
    /// Restricted-eigenvalue curvature.
    pub alpha1: f64,
    /// Restricted-eigenvalue tolerance.
    pub tau: f64,
    pub lambda_k: f64,
    pub c0: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let values = [
            ("sigma_d", self.sigma_d),
            ("sigma_inf", self.sigma_inf),
            ("y_norm", self.y_norm),
            ("b0", self.b0),
            ("alpha1", self.alpha1),
            ("tau", self.tau),
            ("lambda_k", self.lambda_k),
            ("c0", self.c0),
        ];
        for (name, v) in values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid_argument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.m == 0 {
            return Err(invalid_argument("m must be >= 1"));
        }
        if self.n < 2 {
            return Err(invalid_argument(format!("need n >= 2 so that log n > 0, got {}", self.n)));
        }
        Ok(())
    }

    /// `sqrt(log(n) / m)`.
    pub fn rate(&self) -> f64 {
        ((self.n as f64).ln() / self.m as f64).sqrt()
    }
}

/// `||X_k - X_inf||_op`.
pub fn sigma_d(x_k: &DenseMatrix, x_inf: &DenseMatrix) -> Result<f64> {
    linalg::operator_norm(&x_k.sub(x_inf)?)
}

/// `||y||_2 sigma_D / sqrt(log n / m)`.
pub fn phi_y(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.y_norm * inputs.sigma_d / inputs.rate())
}

/// `3 sigma_D (2 sigma_inf + sigma_D) b0 / sqrt(log n / m)`.
pub fn phi_gamma(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(3.0 * inputs.sigma_d * (2.0 * inputs.sigma_inf + inputs.sigma_d) * inputs.b0 / inputs.rate())
}

/// Point-wise maximum of [`phi_y`] and [`phi_gamma`].
pub fn phi_combined(inputs: &BoundInputs) -> Result<f64> {
    Ok(phi_y(inputs)?.max(phi_gamma(inputs)?))
}

/// Returns `(dev_y, dev_gamma)`.
pub fn deviation_lhs(
    x_k: &DenseMatrix,
    x_inf: &DenseMatrix,
    y: &[f64],
    beta: &SparseVector,
) -> Result<(f64, f64)> {
    let d = x_k.sub(x_inf)?;
    let dev_y = linalg::norm_inf(&d.t_matvec(y)?);
    let lhs = x_k.t_matvec(&x_k.matvec(beta.as_slice())?)?;
    let rhs = x_inf.t_matvec(&x_inf.matvec(beta.as_slice())?)?;
    let dev_gamma = lhs.iter().zip(&rhs).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    Ok((dev_y, dev_gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReReport {
    /// No probe violated `theta^T G theta >= alpha1 ||theta||_2^2 - tau ||theta||_1^2`.
    pub holds: bool,
    /// Minimum over probes of left side minus right side.
    pub worst_margin: f64,
    pub violations: usize,
    pub probes_evaluated: usize,
}

fn symmetrized(gamma_hat: &DenseMatrix) -> Result<DenseMatrix> {
    let (r, c) = gamma_hat.shape();
    if r != c {
        return Err(invalid_input(format!("RE check needs a square matrix, got {r}x{c}")));
    }
    Ok(gamma_hat.add(&gamma_hat.transpose())?.scale(0.5))
}

fn quadratic_form(g: &DenseMatrix, theta: &[f64]) -> f64 {
    let gt = g.matvec(theta).expect("square matrix");
    gt.iter().zip(theta).map(|(a, b)| a * b).sum()
}

/// Probe directions: every standard basis vector, then `probes` random
/// directions cycling through Gaussian, sparse Gaussian and random-sign vectors.
fn re_probes(n: usize, probes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for p in 0..probes {
        let theta = match p % 3 {
            0 => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
            1 => {
                let k = rng.random_range(1..=n.min(10));
                let mut theta = vec![0.0; n];
                for idx in rand::seq::index::sample(&mut rng, n, k) {
                    theta[idx] = StandardNormal.sample(&mut rng);
                }
                theta
            }
            _ => (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        };
        out.push(theta);
    }
    out
}

/// Sampled falsification probe of the lower restricted-eigenvalue condition.
/// A `holds = true` outcome is evidence, not a certificate.
pub fn check_lower_re(
    gamma_hat: &DenseMatrix,
    alpha1: f64,
    tau: f64,
    probes: usize,
    seed: u64,
) -> Result<ReReport> {
    let g = symmetrized(gamma_hat)?;
    let thetas = re_probes(g.rows(), probes, seed);
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    for theta in &thetas {
        let l2 = linalg::norm2(theta);
        let l1 = linalg::norm1(theta);
        let lhs = quadratic_form(&g, theta);
        let rhs = alpha1 * l2 * l2 - tau * l1 * l1;
        let margin = lhs - rhs;
        if margin < -ROUNDOFF_SLACK * (lhs.abs() + rhs.abs()) {
            violations += 1;
        }
        worst_margin = worst_margin.min(margin);
    }
    Ok(ReReport { holds: violations == 0, worst_margin, violations, probes_evaluated: thetas.len() })
}

/// Smallest `tau >= 0` for which every probe direction satisfies the lower RE
/// inequality at curvature `alpha1`.
pub fn empirical_re_tolerance(gamma_hat: &DenseMatrix, alpha1: f64, probes: usize, seed: u64) -> Result<f64> {
    let g = symmetrized(gamma_hat)?;
    let mut tau = 0.0f64;
    for theta in re_probes(g.rows(), probes, seed) {
        let l2 = linalg::norm2(&theta);
        let l1 = linalg::norm1(&theta);
        if l1 > 0.0 {
            tau = tau.max((alpha1 * l2 * l2 - quadratic_form(&g, &theta)) / (l1 * l1));
        }
    }
    Ok(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    pub l2_bound: f64,
    pub l1_bound: f64,
    /// `max(phi sqrt(log n / m), lambda_k)`.
    pub max_term: f64,
    /// `sqrt(s) tau <= min(alpha1 / (128 sqrt(s)), phi sqrt(log n / m))`.
    pub side_condition_holds: bool,
}

pub fn error_bounds(inputs: &BoundInputs) -> Result<ErrorBounds> {
    inputs.validate()?;
    if !(inputs.alpha1 > 0.0) {
        return Err(invalid_argument(format!("alpha1 must be > 0, got {}", inputs.alpha1)));
    }
    let deviation = phi_combined(inputs)? * inputs.rate();
    let max_term = deviation.max(inputs.lambda_k);
    let s = inputs.s as f64;
    let root_s = s.sqrt();
    let side_condition_holds = root_s * inputs.tau <= (inputs.alpha1 / (128.0 * root_s)).min(deviation);
    Ok(ErrorBounds {
        l2_bound: inputs.c0 * root_s / inputs.alpha1 * max_term,
        l1_bound: 8.0 * inputs.c0 * s / inputs.alpha1 * max_term,
        max_term,
        side_condition_holds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    /// LASSO weight used to compute `beta_k` on each iterate.
    pub lambda_k: f64,
    pub c0: f64,
    /// `b0 = b0_factor * ||beta_true||_2`.
    pub b0_factor: f64,
    /// RE curvature. `None` uses half the smallest diagonal entry of `X_inf^T X_inf`.
    pub alpha1: Option<f64>,
    /// RE tolerance. `None` uses the smallest value consistent with the probes.
    pub tau: Option<f64>,
    pub probes: usize,
    pub seed: u64,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self { lambda_k: 0.0, c0: 1.0, b0_factor: 1.1, alpha1: None, tau: None, probes: 10_000, seed: 0 }
    }
}

/// Audit of one iterate `X_k`. Field names are part of the JSON report format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateAudit {
    pub k: usize,
    pub sigma_d: f64,
    pub dev_y: f64,
    pub dev_gamma: f64,
    /// `sigma_D ||y||_2`.
    pub cauchy_schwarz_bound: f64,
    /// `3 sigma_D (2 sigma_inf + sigma_D) ||beta_true||_2`.
    pub gamma_bound: f64,
    pub phi_y: f64,
    pub phi_gamma: f64,
    pub phi_combined: f64,
    /// `phi_combined sqrt(log n / m)`.
    pub deviation_rhs: f64,
    pub dev_y_within_rhs: bool,
    pub dev_gamma_within_rhs: bool,
    pub cauchy_schwarz_holds: bool,
    pub gamma_bound_holds: bool,
    pub error_l2: f64,
    pub error_l1: f64,
    pub l2_bound: f64,
    pub l1_bound: f64,
    pub l2_bound_holds: bool,
    pub l1_bound_holds: bool,
    /// Smallest `c0` for which the l2 bound would hold.
    pub required_c0_l2: f64,
    pub required_c0_l1: f64,
    pub side_condition_holds: bool,
    /// `||beta_k||_1 <= b0 sqrt(s)`.
    pub l1_constraint_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub iterations: usize,
    pub sigma_inf: f64,
    pub y_norm: f64,
    pub beta_norm: f64,
    pub b0: f64,
    pub c0: f64,
    pub alpha1: f64,
    pub tau: f64,
    pub lambda_k: f64,
    pub re_check: ReReport,
    pub sigma_d_nonincreasing: bool,
    /// Indices `k` where `sigma_D(k + 1) > sigma_D(k)`.
    pub sigma_d_increases: Vec<usize>,
    pub cauchy_schwarz_violations: usize,
    pub gamma_bound_violations: usize,
    pub dev_y_rhs_violations: usize,
    pub dev_gamma_rhs_violations: usize,
    pub iterates: Vec<IterateAudit>,
    pub notes: Vec<String>,
}

fn within(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + ROUNDOFF_SLACK) + f64::MIN_POSITIVE
}

/// Audits a Soft-Impute trace computed on `instance.masked`, treating the last
/// iterate as `X_inf`.
pub fn run_bound_audit(instance: &Instance, si_trace: &[DenseMatrix], params: &AuditParams) -> Result<AuditReport> {
    let x_inf = si_trace
        .last()
        .ok_or_else(|| invalid_argument("Soft-Impute trace is empty"))?;
    let (m, n) = x_inf.shape();
    if instance.y.len() != m || instance.beta_true.len() != n {
        return Err(invalid_input("instance does not match the trace dimensions"));
    }
    let y = &instance.y;
    let beta = &instance.beta_true;
    let s = beta.support().len();
    let sigma_inf = linalg::operator_norm(x_inf)?;
    let y_norm = linalg::norm2(y);
    let beta_norm = beta.norm2();
    let b0 = params.b0_factor * beta_norm;

    let gamma_inf = x_inf.gram();
    let alpha1 = match params.alpha1 {
        Some(a) => a,
        None => {
            let min_diag = (0..n).map(|j| gamma_inf.get(j, j)).fold(f64::INFINITY, f64::min);
            0.5 * min_diag
        }
    };
    let tau = match params.tau {
        Some(t) => t,
        None => empirical_re_tolerance(&gamma_inf, alpha1, params.probes, params.seed)?,
    };
    let re_check = check_lower_re(&gamma_inf, alpha1, tau, params.probes, params.seed)?;

    let mut iterates = Vec::with_capacity(si_trace.len());
    let mut warm: Option<Vec<f64>> = None;
    for (k, x_k) in si_trace.iter().enumerate() {
        let sd = sigma_d(x_k, x_inf)?;
        let (dev_y, dev_gamma) = deviation_lhs(x_k, x_inf, y, beta)?;
        let inputs = BoundInputs {
            sigma_d: sd,
            sigma_inf,
            y_norm,
            b0,
            s,
            m,
            n,
            alpha1,
            tau,
            lambda_k: params.lambda_k,
            c0: params.c0,
        };
        let py = phi_y(&inputs)?;
        let pg = phi_gamma(&inputs)?;
        let pc = py.max(pg);
        let deviation_rhs = pc * inputs.rate();
        let cauchy_schwarz_bound = sd * y_norm;
        let gamma_bound = 3.0 * sd * (2.0 * sigma_inf + sd) * beta_norm;

        let gram = x_k.gram();
        let xty = x_k.t_matvec(y)?;
        let fit = sparse::lasso_gram(&gram, &xty, &LassoConfig::new(params.lambda_k), warm.as_deref())?;
        let diff: Vec<f64> = fit.beta.iter().zip(beta.as_slice()).map(|(a, b)| a - b).collect();
        let error_l2 = linalg::norm2(&diff);
        let error_l1 = linalg::norm1(&diff);
        let l1_constraint_holds = linalg::norm1(&fit.beta) <= b0 * (s as f64).sqrt();
        warm = Some(fit.beta);

        let (l2_bound, l1_bound, side_condition_holds, unit_l2, unit_l1) = if alpha1 > 0.0 {
            let b = error_bounds(&inputs)?;
            let unit = error_bounds(&BoundInputs { c0: 1.0, ..inputs })?;
            (b.l2_bound, b.l1_bound, b.side_condition_holds, unit.l2_bound, unit.l1_bound)
        } else {
            (f64::INFINITY, f64::INFINITY, false, f64::INFINITY, f64::INFINITY)
        };
        let required = |err: f64, unit: f64| if unit > 0.0 { err / unit } else if err == 0.0 { 0.0 } else { f64::INFINITY };

        iterates.push(IterateAudit {
            k: k + 1,
            sigma_d: sd,
            dev_y,
            dev_gamma,
            cauchy_schwarz_bound,
            gamma_bound,
            phi_y: py,
            phi_gamma: pg,
            phi_combined: pc,
            deviation_rhs,
            dev_y_within_rhs: within(dev_y, deviation_rhs),
            dev_gamma_within_rhs: within(dev_gamma, deviation_rhs),
            cauchy_schwarz_holds: within(dev_y, cauchy_schwarz_bound),
            gamma_bound_holds: within(dev_gamma, gamma_bound),
            error_l2,
            error_l1,
            l2_bound,
            l1_bound,
            l2_bound_holds: error_l2 <= l2_bound,
            l1_bound_holds: error_l1 <= l1_bound,
            required_c0_l2: required(error_l2, unit_l2),
            required_c0_l1: required(error_l1, unit_l1),
            side_condition_holds,
            l1_constraint_holds,
        });
    }

    let sigma_d_increases: Vec<usize> = iterates
        .windows(2)
        .filter(|w| !within(w[1].sigma_d, w[0].sigma_d))
        .map(|w| w[0].k)
        .collect();
    let count = |f: fn(&IterateAudit) -> bool| iterates.iter().filter(|it| !f(it)).count();

    Ok(AuditReport {
        m,
        n,
        s,
        iterations: si_trace.len(),
        sigma_inf,
        y_norm,
        beta_norm,
        b0,
        c0: params.c0,
        alpha1,
        tau,
        lambda_k: params.lambda_k,
        re_check,
        sigma_d_nonincreasing: sigma_d_increases.is_empty(),
        cauchy_schwarz_violations: count(|it| it.cauchy_schwarz_holds),
        gamma_bound_violations: count(|it| it.gamma_bound_holds),
        dev_y_rhs_violations: count(|it| it.dev_y_within_rhs),
        dev_gamma_rhs_violations: count(|it| it.dev_gamma_within_rhs),
        sigma_d_increases,
        iterates,
        notes: vec![
            "X_inf is the last iterate of the supplied trace, not the true limit".into(),
            "the penalized objective uses ||X b - y||^2 while its quadratic form uses (1/2) b^T G b; \
             inequalities are evaluated as stated, without rescaling"
                .into(),
            "the l1-ball constraint ||b||_1 <= b0 sqrt(s) is reported, not enforced".into(),
            "the RE check is a sampled probe, not a certificate".into(),
        ],
    })
}

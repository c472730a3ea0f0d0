//! Seeded invariant checks and independent oracles shared by the property
//! suites and the acceptance harness. Every check returns `Err(reason)` on
//! violation so callers can either fail a proptest case or tally failures.
#![allow(dead_code)]

use lrsparse::bench::{self, Method};
use lrsparse::completion::{soft_impute, Budget, CompletionConfig, MaskedMatrix};
use lrsparse::diagnostics::{self, BoundInputs};
use lrsparse::linalg::{self, DenseMatrix};
use lrsparse::pipelines::{self, PipelineParams, RecoveryResult};
use lrsparse::sparse::{self, ImatConfig, LassoConfig, SparseVector};
use lrsparse::synth::{self, ExperimentSpec, Instance};
use lrsparse::Error;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, why: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

pub fn prop(check: Check) -> Result<(), proptest::test_runner::TestCaseError> {
    check.map_err(proptest::test_runner::TestCaseError::fail)
}

pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let entries = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::from_row_major(rows, cols, entries).unwrap()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> DenseMatrix {
    gaussian(rng, rows, rank).matmul(&gaussian(rng, rank, cols)).unwrap()
}

/// Bernoulli mask with at least one observed entry per row.
pub fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.random::<f64>() < p).collect();
    for i in 0..rows {
        let j = rng.random_range(0..cols);
        mask[i * cols + j] = true;
    }
    mask
}

pub fn masked(values: &DenseMatrix, mask: Vec<bool>) -> MaskedMatrix {
    MaskedMatrix::from_row_major(values.rows(), values.cols(), values.as_slice().to_vec(), mask).unwrap()
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    let entries = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    DenseMatrix::from_row_major(m.nrows(), m.ncols(), entries).unwrap()
}

/// Singular-value shrinkage computed with an independent SVD.
pub fn oracle_svt(m: &DenseMatrix, tau: f64) -> DenseMatrix {
    let svd = to_na(m).svd(true, true);
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    from_na(&(u * DMatrix::from_diagonal(&shrunk) * v_t))
}

pub fn oracle_singular_values(m: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `q` with orthonormal columns from the QR factorization of a Gaussian matrix.
pub fn oracle_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    from_na(&to_na(&gaussian(rng, rows, cols)).qr().q())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `||X b - y||^2 + lambda ||b||_1`, evaluated without the library.
pub fn oracle_lasso_objective(x: &DenseMatrix, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let (m, n) = x.shape();
    let a = x.as_slice();
    let rss: f64 = (0..m)
        .map(|i| {
            let fit: f64 = (0..n).map(|j| a[i * n + j] * beta[j]).sum();
            (fit - y[i]).powi(2)
        })
        .sum();
    rss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Accelerated proximal gradient on the LASSO objective, run for `iters` steps.
pub fn oracle_proximal_gradient(x: &DenseMatrix, y: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let (m, n) = x.shape();
    let a = x.as_slice();
    let op = oracle_singular_values(x)[0];
    let step = 1.0 / (2.0 * op * op);
    let grad = |b: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = (0..m).map(|i| (0..n).map(|j| a[i * n + j] * b[j]).sum::<f64>() - y[i]).collect();
        (0..n).map(|j| 2.0 * (0..m).map(|i| a[i * n + j] * r[i]).sum::<f64>()).collect()
    };
    let mut beta = vec![0.0; n];
    let mut z = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = grad(&z);
        let next: Vec<f64> = z
            .iter()
            .zip(&g)
            .map(|(zj, gj)| {
                let v = zj - step * gj;
                v.signum() * (v.abs() - step * lambda).max(0.0)
            })
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = next.iter().zip(&beta).map(|(nb, b)| nb + (t - 1.0) / t_next * (nb - b)).collect();
        beta = next;
        t = t_next;
    }
    beta
}

/// `2 ||X^T y||_inf`, the smallest weight at which the LASSO returns zero.
pub fn critical_lambda(x: &DenseMatrix, y: &[f64]) -> f64 {
    2.0 * linalg::norm_inf(&x.t_matvec(y).unwrap())
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> (usize, usize) {
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

// ---------------------------------------------------------------- linalg

pub fn svd_factors_are_valid(seed: u64) -> Check {
    let mut r = rng(seed, 1);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let f = linalg::svd(&a).map_err(|e| e.to_string())?;
    let s = &f.singular_values;
    ensure(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0), || format!("unsorted {s:?}"))?;
    for (name, q) in [("left", &f.left_vectors), ("right", &f.right_vectors)] {
        let g = q.t().dot(q);
        let dev = g.indexed_iter().fold(0.0f64, |acc, ((i, j), v)| acc.max((v - f64::from(u8::from(i == j))).abs()));
        ensure(dev <= 1e-8, || format!("{name} vectors deviate from orthonormal by {dev:e}"))?;
    }
    let op = s[0];
    let err = max_abs_diff(f.reconstruct().as_slice(), a.as_slice());
    ensure(err <= 1e-8 * (1.0 + op), || format!("reconstruction error {err:e}"))
}

pub fn svt_matches_oracle(seed: u64) -> Check {
    let mut r = rng(seed, 2);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let op = linalg::operator_norm(&a).unwrap();
    let tau = r.random_range(0.0..1.2) * op;
    let got = linalg::svt(&a, tau).map_err(|e| e.to_string())?;
    let want = oracle_svt(&a, tau);
    let err = max_abs_diff(got.as_slice(), want.as_slice());
    ensure(err <= 1e-8 * (1.0 + op), || format!("svt differs from oracle by {err:e} at tau {tau}"))?;
    let shrunk: Vec<f64> = oracle_singular_values(&a).iter().map(|s| (s - tau).max(0.0)).collect();
    let out = oracle_singular_values(&got);
    let err = max_abs_diff(&out, &shrunk);
    ensure(err <= 1e-8 * (1.0 + op), || format!("output singular values off by {err:e}"))
}

pub fn svt_is_non_expansive(seed: u64) -> Check {
    let mut r = rng(seed, 3);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let b = a.add(&gaussian(&mut r, m, n).scale(r.random_range(0.01..2.0))).unwrap();
    let tau = r.random_range(0.0..1.0) * linalg::operator_norm(&a).unwrap();
    let lhs = linalg::svt(&a, tau).unwrap().sub(&linalg::svt(&b, tau).unwrap()).unwrap().frobenius_norm();
    let rhs = a.sub(&b).unwrap().frobenius_norm();
    ensure(lhs <= rhs * (1.0 + 1e-10) + 1e-12, || format!("||svt(A)-svt(B)|| = {lhs} > ||A-B|| = {rhs}"))
}

pub fn svt_shrinks_nuclear_norm(seed: u64) -> Check {
    let mut r = rng(seed, 4);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let before = linalg::nuclear_norm(&a).unwrap();
    let tau = r.random_range(0.0..1.5) * linalg::operator_norm(&a).unwrap();
    let after = linalg::nuclear_norm(&linalg::svt(&a, tau).unwrap()).unwrap();
    ensure(after <= before * (1.0 + 1e-12), || format!("nuclear norm grew from {before} to {after}"))
}

pub fn operator_norm_triangle(seed: u64) -> Check {
    let mut r = rng(seed, 5);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let b = gaussian(&mut r, m, n).scale(r.random_range(0.0..3.0));
    let sum = linalg::operator_norm(&a.add(&b).unwrap()).unwrap();
    let bound = linalg::operator_norm(&a).unwrap() + linalg::operator_norm(&b).unwrap();
    ensure(sum <= bound * (1.0 + 1e-12), || format!("{sum} > {bound}"))?;
    let oracle = oracle_singular_values(&a)[0];
    let got = linalg::operator_norm(&a).unwrap();
    ensure((got - oracle).abs() <= 1e-10 * (1.0 + oracle), || format!("operator norm {got} vs oracle {oracle}"))
}

/// Covers over- and underdetermined shapes and rank-deficient designs.
pub fn least_squares_residual_is_orthogonal(seed: u64) -> Check {
    let mut r = rng(seed, 6);
    let (m, n) = dims(&mut r, 1, 14);
    let x = if r.random_bool(0.3) {
        let rank = r.random_range(1..=m.min(n));
        low_rank(&mut r, m, n, rank)
    } else {
        gaussian(&mut r, m, n)
    };
    let y = gaussian_vec(&mut r, m);
    let beta = linalg::least_squares(&x, &y).map_err(|e| e.to_string())?;
    let resid: Vec<f64> = x.matvec(&beta).unwrap().iter().zip(&y).map(|(a, b)| a - b).collect();
    let g = linalg::norm_inf(&x.t_matvec(&resid).unwrap());
    let op = linalg::operator_norm(&x).unwrap();
    let scale = 1.0 + op * linalg::norm2(&y);
    ensure(g <= 1e-6 * scale, || format!("||X^T r||_inf = {g:e} on {m}x{n}"))
}

// ---------------------------------------------------------------- completion

/// Low-rank matrix plus small noise, observed with probability in [0.3, 0.9].
fn completion_problem(r: &mut ChaCha8Rng) -> (DenseMatrix, Vec<bool>) {
    let (m, n) = dims(r, 3, 16);
    let rank = r.random_range(1..=m.min(n).min(4));
    let truth = low_rank(r, m, n, rank).add(&gaussian(r, m, n).scale(0.05)).unwrap();
    let p = r.random_range(0.3..0.9);
    let mask = random_mask(r, m, n, p);
    (truth, mask)
}

pub fn soft_impute_fully_observed_matches_svt_oracle(seed: u64) -> Check {
    let mut r = rng(seed, 10);
    let (m, n) = dims(&mut r, 1, 15);
    let a = gaussian(&mut r, m, n);
    let op = oracle_singular_values(&a)[0];
    let lambda = r.random_range(0.0..2.0) * op;
    let out = soft_impute(&MaskedMatrix::fully_observed(a.clone()), &CompletionConfig::accurate(lambda))
        .map_err(|e| e.to_string())?;
    let want = oracle_svt(&a, lambda / 2.0);
    let err = max_abs_diff(out.completed.as_slice(), want.as_slice());
    ensure(err <= 1e-6, || format!("soft-impute differs from svt(M, lambda/2) by {err:e}"))
}

pub fn soft_impute_descends(seed: u64) -> Check {
    let mut r = rng(seed, 11);
    let (truth, mask) = completion_problem(&mut r);
    let input = masked(&truth, mask);
    let lambda = r.random_range(0.01..1.0) * linalg::operator_norm(input.zero_filled()).unwrap();
    let budget = if r.random_bool(0.5) { Budget::Quick } else { Budget::Accurate };
    let out = soft_impute(&input, &CompletionConfig::new(lambda, budget)).map_err(|e| e.to_string())?;
    let t = &out.objective_trace;
    for k in 1..t.len() {
        ensure(t[k] <= t[k - 1] + 1e-9 * t[k - 1].abs().max(1.0), || {
            format!("objective rose at {k}: {} -> {}", t[k - 1], t[k])
        })?;
    }
    let at_zero = lrsparse::completion::eval_objective(&DenseMatrix::zeros(truth.rows(), truth.cols()), &input, lambda)
        .unwrap();
    let last = *t.last().unwrap();
    ensure(last <= at_zero * (1.0 + 1e-12), || format!("final objective {last} above objective at zero {at_zero}"))
}

pub fn soft_impute_ignores_unobserved_values(seed: u64) -> Check {
    let mut r = rng(seed, 12);
    let (truth, mask) = completion_problem(&mut r);
    let (m, n) = truth.shape();
    let garbage = |r: &mut ChaCha8Rng| -> Vec<f64> {
        truth
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(&v, &seen)| if seen { v } else { r.random_range(-1e6..1e6) })
            .collect()
    };
    let a = MaskedMatrix::from_row_major(m, n, garbage(&mut r), mask.clone()).unwrap();
    let mut poisoned = garbage(&mut r);
    for (v, &seen) in poisoned.iter_mut().zip(&mask) {
        if !seen {
            *v = f64::NAN;
        }
    }
    let b = MaskedMatrix::from_row_major(m, n, poisoned, mask).unwrap();
    let cfg = CompletionConfig::accurate(0.2 * linalg::operator_norm(a.zero_filled()).unwrap());
    let (oa, ob) = (soft_impute(&a, &cfg).unwrap(), soft_impute(&b, &cfg).unwrap());
    ensure(oa.completed.as_slice() == ob.completed.as_slice(), || "output depends on unobserved values".into())
}

pub fn soft_impute_approaches_input_as_lambda_shrinks(seed: u64) -> Check {
    let mut r = rng(seed, 13);
    let (m, n) = dims(&mut r, 1, 12);
    let a = gaussian(&mut r, m, n);
    let op = linalg::operator_norm(&a).unwrap();
    let input = MaskedMatrix::fully_observed(a.clone());
    let mut previous = f64::INFINITY;
    for frac in [4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.03, 0.01, 1e-3, 0.0] {
        let out = soft_impute(&input, &CompletionConfig::accurate(frac * op)).unwrap();
        let gap = out.completed.sub(&a).unwrap().frobenius_norm();
        ensure(gap <= previous * (1.0 + 1e-10) + 1e-12, || format!("gap rose to {gap} at lambda {frac} op"))?;
        previous = gap;
    }
    ensure(previous <= 1e-10 * (1.0 + op), || format!("lambda = 0 leaves gap {previous:e}"))
}

pub fn accurate_budget_not_worse_than_quick(seed: u64) -> Check {
    let mut r = rng(seed, 14);
    let (truth, mask) = completion_problem(&mut r);
    let input = masked(&truth, mask);
    let lambda = r.random_range(0.01..1.0) * linalg::operator_norm(input.zero_filled()).unwrap();
    let quick = soft_impute(&input, &CompletionConfig::quick(lambda)).unwrap();
    let accurate = soft_impute(&input, &CompletionConfig::accurate(lambda)).unwrap();
    let (q, a) = (*quick.objective_trace.last().unwrap(), *accurate.objective_trace.last().unwrap());
    ensure(quick.iterations_used <= 5, || format!("quick used {} iterations", quick.iterations_used))?;
    ensure(a <= q + 1e-9 * q.abs().max(1.0), || format!("accurate {a} > quick {q}"))
}

// ---------------------------------------------------------------- sparse

fn regression_problem(r: &mut ChaCha8Rng) -> (DenseMatrix, Vec<f64>) {
    let m = r.random_range(3..=30);
    let n = r.random_range(1..=20);
    let x = gaussian(r, m, n);
    let y = gaussian_vec(r, m);
    (x, y)
}

pub fn lasso_satisfies_kkt(seed: u64) -> Check {
    let mut r = rng(seed, 20);
    let (x, y) = regression_problem(&mut r);
    let lambda_max = critical_lambda(&x, &y);
    let lambda = r.random_range(0.01..1.0) * lambda_max;
    let beta = sparse::lasso(&x, &y, &LassoConfig::new(lambda)).map_err(|e| e.to_string())?.entries;
    let resid: Vec<f64> = x.matvec(&beta).unwrap().iter().zip(&y).map(|(a, b)| a - b).collect();
    let grad: Vec<f64> = x.t_matvec(&resid).unwrap().iter().map(|g| 2.0 * g).collect();
    let scale = 1.0 + lambda_max;
    for (j, (g, b)) in grad.iter().zip(&beta).enumerate() {
        let gap = if *b != 0.0 { (g + lambda * b.signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        ensure(gap <= 1e-4 * scale, || format!("KKT gap {gap:e} at coordinate {j}"))?;
    }
    Ok(())
}

pub fn lasso_objective_beats_zero_and_least_squares(seed: u64) -> Check {
    let mut r = rng(seed, 21);
    let (x, y) = regression_problem(&mut r);
    let lambda = r.random_range(0.0..1.2) * critical_lambda(&x, &y);
    let beta = sparse::lasso(&x, &y, &LassoConfig::new(lambda)).unwrap().entries;
    let at = |b: &[f64]| oracle_lasso_objective(&x, &y, b, lambda);
    let (got, zero) = (at(&beta), at(&vec![0.0; x.cols()]));
    let ls = at(&linalg::least_squares(&x, &y).unwrap());
    let slack = 1e-9 * zero.max(1.0);
    ensure(got <= zero + slack, || format!("objective {got} above zero-vector objective {zero}"))?;
    ensure(got <= ls + slack, || format!("objective {got} above least-squares objective {ls}"))
}

pub fn lasso_extremes(seed: u64) -> Check {
    let mut r = rng(seed, 22);
    let n = r.random_range(1..=10);
    let m = n + r.random_range(5..=20);
    let x = gaussian(&mut r, m, n);
    let y = gaussian_vec(&mut r, m);
    let b0 = sparse::lasso(&x, &y, &LassoConfig::new(0.0)).unwrap().entries;
    let ls = linalg::least_squares(&x, &y).unwrap();
    let err = max_abs_diff(&b0, &ls);
    ensure(err <= 1e-6 * (1.0 + linalg::norm_inf(&ls)), || format!("lambda = 0 differs from least squares by {err:e}"))?;
    let above = critical_lambda(&x, &y) * r.random_range(1.0..3.0);
    let zero = sparse::lasso(&x, &y, &LassoConfig::new(above)).unwrap().entries;
    ensure(zero.iter().all(|&b| b == 0.0), || format!("nonzero solution above the critical weight: {zero:?}"))
}

pub fn lasso_matches_proximal_gradient(seed: u64) -> Check {
    let mut r = rng(seed, 23);
    let x = gaussian(&mut r, 20, 8);
    let y = gaussian_vec(&mut r, 20);
    let lambda = 1.0;
    let reference = oracle_proximal_gradient(&x, &y, lambda, 100_000);
    let beta = sparse::lasso(&x, &y, &LassoConfig::new(lambda)).unwrap().entries;
    let (got, want) = (oracle_lasso_objective(&x, &y, &beta, lambda), oracle_lasso_objective(&x, &y, &reference, lambda));
    ensure((got - want).abs() <= 1e-6, || format!("objective {got} vs reference {want}"))
}

/// Noiseless orthonormal design with an s-sparse truth, `s <= m / 4`.
fn orthonormal_problem(r: &mut ChaCha8Rng) -> (DenseMatrix, Vec<f64>, Vec<f64>) {
    let m = r.random_range(8..=40);
    let n = r.random_range(2..=m);
    let s = r.random_range(1..=(m / 4).min(n));
    let q = oracle_orthonormal(r, m, n);
    let mut beta = vec![0.0; n];
    for j in sample(r, n, s) {
        let magnitude = r.random_range(0.1..3.0);
        beta[j] = if r.random_bool(0.5) { magnitude } else { -magnitude };
    }
    let y = q.matvec(&beta).unwrap();
    (q, y, beta)
}

pub fn imat_recovers_orthonormal_signal(seed: u64) -> Check {
    let mut r = rng(seed, 24);
    let (q, y, beta) = orthonormal_problem(&mut r);
    let out = sparse::imatcs(&q, &y, &ImatConfig::default()).map_err(|e| e.to_string())?;
    let err = linalg::dist2(&out.beta.entries, &beta);
    ensure(err <= 1e-4, || format!("recovery error {err:e}"))
}

pub fn imat_support_grows_below_smallest_coefficient(seed: u64) -> Check {
    let mut r = rng(seed, 25);
    let (q, y, beta) = orthonormal_problem(&mut r);
    let out = sparse::imatcs(&q, &y, &ImatConfig::default()).unwrap();
    ensure(out.thresholds.windows(2).all(|w| w[1] < w[0]), || "thresholds not strictly decreasing".into())?;
    let smallest = beta.iter().filter(|b| **b != 0.0).fold(f64::INFINITY, |a, b| a.min(b.abs()));
    let start = out.thresholds.iter().position(|&t| t < smallest).unwrap_or(out.thresholds.len());
    let sizes = &out.support_sizes[start..];
    ensure(sizes.windows(2).all(|w| w[1] >= w[0]), || format!("support sizes shrink after iteration {start}: {sizes:?}"))
}

pub fn support_embed_round_trip(seed: u64) -> Check {
    let mut r = rng(seed, 26);
    let n = r.random_range(1..=50);
    let k = r.random_range(1..=n);
    let mut support: Vec<usize> = sample(&mut r, n, k).into_vec();
    support.sort_unstable();
    let values: Vec<f64> = (0..k).map(|_| r.random_range(0.1..5.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let embedded = pipelines::embed_support(&SparseVector::new(values.clone()).unwrap(), &support, n).unwrap();
    ensure(sparse::support(&embedded) == support, || "support(embed(S)) != S".into())?;
    let restricted: Vec<f64> = support.iter().map(|&j| embedded.entries[j]).collect();
    ensure(restricted == values, || "restricted entries differ".into())
}

pub fn restrict_embed_round_trip(seed: u64) -> Check {
    let mut r = rng(seed, 27);
    let (m, n) = dims(&mut r, 2, 20);
    let x = gaussian(&mut r, m, n);
    let mask = random_mask(&mut r, m, n, 0.6);
    let input = masked(&x, mask.clone());
    let mut beta = vec![0.0; n];
    let k = r.random_range(1..=n);
    for j in sample(&mut r, n, k) {
        beta[j] = r.random_range(0.1..2.0);
    }
    let beta = SparseVector::new(beta).unwrap();
    let support = sparse::support(&beta);
    let narrowed = pipelines::restrict_columns(&input, &support).map_err(|e| e.to_string())?;
    ensure(narrowed.shape() == (m, support.len()), || "restricted shape".into())?;
    for i in 0..m {
        for (jj, &j) in support.iter().enumerate() {
            ensure(narrowed.is_observed(i, jj) == mask[i * n + j], || format!("mask at ({i}, {j})"))?;
            ensure(narrowed.zero_filled().get(i, jj) == input.zero_filled().get(i, j), || format!("value at ({i}, {j})"))?;
        }
    }
    let beta_s = SparseVector::new(support.iter().map(|&j| beta.entries[j]).collect()).unwrap();
    let back = pipelines::embed_support(&beta_s, &support, n).unwrap();
    ensure(back.entries == beta.entries, || "embed(restrict(b)) != b".into())
}

// ---------------------------------------------------------------- pipelines

pub fn small_spec(r: &mut ChaCha8Rng, seed: u64) -> ExperimentSpec {
    let m = r.random_range(30..=60);
    let n = r.random_range(8..=20);
    ExperimentSpec {
        r: r.random_range(1..=4),
        s: r.random_range(1..=4),
        alpha_obs: r.random_range(0.5..1.0),
        noise_sigma: r.random_range(0.0..0.2),
        ..ExperimentSpec::new(m, n, seed)
    }
}

/// Both lambdas as fractions of their natural scales on the training data.
pub fn relative_params(train: &MaskedMatrix, y: &[f64], f1: f64, f2: f64) -> PipelineParams {
    let reference = bench::LambdaReference::of(train, y).unwrap();
    let (lambda1, lambda2) = reference.resolve(bench::LambdaScale::Relative, f1, f2);
    PipelineParams { lambda1, lambda2, ..PipelineParams::default() }
}

/// Pipeline output, treating an empty support as its carried partial result.
pub fn fit(method: Method, input: &MaskedMatrix, y: &[f64], params: &PipelineParams) -> Result<RecoveryResult, String> {
    match method.fit(input, y, params) {
        Ok(r) => Ok(r),
        Err(Error::EmptySupport(partial)) => Ok(*partial),
        Err(e) => Err(e.to_string()),
    }
}

fn same_result(a: &RecoveryResult, b: &RecoveryResult) -> bool {
    a.beta_hat == b.beta_hat
        && a.support_estimate == b.support_estimate
        && a.outer_iterations == b.outer_iterations
        && a.objective_traces == b.objective_traces
        && a.beta_changes == b.beta_changes
        && a.augmented_column_residuals == b.augmented_column_residuals
        && a.converged == b.converged
}

pub fn pipelines_are_deterministic(seed: u64) -> Check {
    let mut r = rng(seed, 30);
    let spec = small_spec(&mut r, seed);
    let method = Method::ALL[r.random_range(0..3)];
    let inst = synth::generate_instance(&spec).unwrap();
    let (train, y) = bench::training_data(&inst);
    let params = relative_params(&train, &y, r.random_range(0.02..0.3), r.random_range(0.01..0.3));
    let a = fit(method, &train, &y, &params)?;
    let b = fit(method, &train, &y, &params)?;
    ensure(same_result(&a, &b), || format!("{method} is not deterministic"))
}

pub fn pipeline_outputs_are_consistent(seed: u64) -> Check {
    let mut r = rng(seed, 31);
    let spec = small_spec(&mut r, seed);
    let method = Method::ALL[r.random_range(0..3)];
    let inst = synth::generate_instance(&spec).unwrap();
    let (train, y) = bench::training_data(&inst);
    let params = relative_params(&train, &y, r.random_range(0.02..0.3), r.random_range(0.01..0.3));
    let out = fit(method, &train, &y, &params)?;
    ensure(out.beta_hat.len() == spec.n, || "beta_hat length".into())?;
    let nonzero = sparse::support(&SparseVector::with_tolerance(out.beta_hat.entries.clone(), 0.0).unwrap());
    if method != Method::TwoStep {
        ensure(nonzero.iter().all(|j| out.support_estimate.binary_search(j).is_ok()), || {
            format!("{method}: nonzero outside the support estimate")
        })?;
    }
    if method == Method::TwoStep {
        return Ok(());
    }
    let tolerances = [params.epsilon, params.alpha_stop];
    for (phase, changes) in out.beta_changes.iter().enumerate() {
        let stopped_early = out.outer_iterations[phase] < params.max_outer_iters;
        if let (true, Some(&last)) = (stopped_early, changes.last()) {
            let tol = tolerances[phase];
            ensure(last <= tol, || format!("{method} phase {phase} stopped at change {last} > {tol}"))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- synth

pub fn random_spec(r: &mut ChaCha8Rng, seed: u64) -> ExperimentSpec {
    let m = r.random_range(5..=60);
    let n = r.random_range(1..=40);
    ExperimentSpec {
        m,
        n,
        r: r.random_range(0..=m.min(n)),
        s: r.random_range(0..=n),
        alpha_obs: r.random_range(0.05..=1.0),
        noise_sigma: r.random_range(0.0..2.0),
        seed,
    }
}

pub fn generators_are_deterministic(seed: u64) -> Check {
    let mut r = rng(seed, 40);
    let spec = random_spec(&mut r, seed);
    let (a, b) = (synth::generate_instance(&spec).unwrap(), synth::generate_instance(&spec).unwrap());
    ensure(a == b, || "same seed produced different instances".into())?;
    let other = synth::generate_instance(&ExperimentSpec { seed: seed.wrapping_add(1), ..spec }).unwrap();
    ensure(spec.m * spec.n < 4 || a.x_true != other.x_true || spec.r == 0, || "seed does not reach the generator".into())
}

pub fn instance_is_consistent(seed: u64) -> Check {
    let mut r = rng(seed, 41);
    let spec = random_spec(&mut r, seed);
    let inst = synth::generate_instance(&spec).map_err(|e| e.to_string())?;
    let s = oracle_singular_values(&inst.x_true);
    let rank = if s[0] == 0.0 { 0 } else { s.iter().filter(|&&v| v > 1e-8 * s[0]).count() };
    ensure(rank == spec.r, || format!("numerical rank {rank}, expected {}", spec.r))?;
    let nnz = inst.beta_true.entries.iter().filter(|b| **b != 0.0).count();
    ensure(nnz == spec.s, || format!("{nnz} nonzeros, expected {}", spec.s))?;
    ensure(inst.beta_true.entries.iter().all(|b| *b == 0.0 || b.abs() >= 0.1), || "coefficient below 0.1".into())?;
    let expected_train = (4.0 * spec.m as f64 / 5.0).round() as usize;
    ensure(inst.train_rows.len() == expected_train, || format!("{} train rows", inst.train_rows.len()))?;
    let mut all: Vec<usize> = inst.train_rows.iter().chain(&inst.test_rows).copied().collect();
    all.sort_unstable();
    ensure(all == (0..spec.m).collect::<Vec<_>>(), || "train/test is not a partition".into())?;
    for i in 0..spec.m {
        for j in 0..spec.n {
            if inst.masked.is_observed(i, j) {
                ensure(inst.masked.zero_filled().get(i, j) == inst.x_true.get(i, j), || format!("masked value at ({i}, {j})"))?;
            }
        }
    }
    ensure(inst.y.len() == spec.m, || "label length".into())
}

// ---------------------------------------------------------------- diagnostics

fn diagnostic_problem(r: &mut ChaCha8Rng) -> (DenseMatrix, DenseMatrix, Vec<f64>, SparseVector) {
    let (m, n) = dims(r, 2, 15);
    let rank = r.random_range(1..=m.min(n));
    let x_inf = low_rank(r, m, n, rank);
    let x_k = x_inf.add(&gaussian(r, m, n).scale(r.random_range(0.0..1.0))).unwrap();
    let y = gaussian_vec(r, m);
    let beta = SparseVector::new(gaussian_vec(r, n)).unwrap();
    (x_k, x_inf, y, beta)
}

pub fn cauchy_schwarz_chain_holds(seed: u64) -> Check {
    let mut r = rng(seed, 50);
    let (x_k, x_inf, y, beta) = diagnostic_problem(&mut r);
    let (dev_y, _) = diagnostics::deviation_lhs(&x_k, &x_inf, &y, &beta).unwrap();
    let sd = diagnostics::sigma_d(&x_k, &x_inf).unwrap();
    let bound = sd * linalg::norm2(&y);
    ensure(dev_y <= bound * (1.0 + 1e-10) + 1e-14, || format!("dev_y {dev_y} > sigma_d ||y|| {bound}"))
}

pub fn gamma_deviation_bound_holds(seed: u64) -> Check {
    let mut r = rng(seed, 51);
    let (x_k, x_inf, y, beta) = diagnostic_problem(&mut r);
    let (_, dev_gamma) = diagnostics::deviation_lhs(&x_k, &x_inf, &y, &beta).unwrap();
    let sd = diagnostics::sigma_d(&x_k, &x_inf).unwrap();
    let si = linalg::operator_norm(&x_inf).unwrap();
    let bound = 3.0 * sd * (2.0 * si + sd) * beta.norm2();
    ensure(dev_gamma <= bound * (1.0 + 1e-10) + 1e-12, || format!("dev_gamma {dev_gamma} > {bound}"))
}

pub fn bound_formulas_are_consistent(seed: u64) -> Check {
    let mut r = rng(seed, 52);
    let inputs = BoundInputs {
        sigma_d: r.random_range(0.0..5.0),
        sigma_inf: r.random_range(0.0..10.0),
        y_norm: r.random_range(0.0..10.0),
        b0: r.random_range(0.0..5.0),
        s: r.random_range(1..=40),
        m: r.random_range(1..=5000),
        n: r.random_range(2..=1000),
        alpha1: r.random_range(1e-3..5.0),
        tau: r.random_range(0.0..1e-2),
        lambda_k: r.random_range(0.0..2.0),
        c0: r.random_range(0.1..3.0),
    };
    let phi = diagnostics::phi_combined(&inputs).unwrap();
    let (py, pg) = (diagnostics::phi_y(&inputs).unwrap(), diagnostics::phi_gamma(&inputs).unwrap());
    ensure(phi >= py && phi >= pg && (phi == py || phi == pg), || "phi_combined is not the maximum".into())?;
    let b = diagnostics::error_bounds(&inputs).unwrap();
    let ratio = b.l1_bound / b.l2_bound;
    let want = 8.0 * (inputs.s as f64).sqrt();
    ensure(b.l2_bound == 0.0 || (ratio - want).abs() <= 1e-12 * want, || format!("l1/l2 = {ratio}, expected {want}"))
}

// ---------------------------------------------------------------- bench

/// Replaces every test-row label by NaN and every test-row design entry by
/// large garbage.
pub fn poison_test_rows(inst: &Instance, r: &mut ChaCha8Rng) -> Instance {
    let mut out = inst.clone();
    let (m, n) = (inst.spec.m, inst.spec.n);
    let mut values = inst.masked.zero_filled().as_slice().to_vec();
    let mut truth = inst.x_true.as_slice().to_vec();
    for &i in &inst.test_rows {
        out.y[i] = f64::NAN;
        for j in 0..n {
            values[i * n + j] = r.random_range(-1e8..1e8);
            truth[i * n + j] = r.random_range(-1e8..1e8);
        }
    }
    let mask = inst.masked.mask().iter().copied().collect();
    out.masked = MaskedMatrix::from_row_major(m, n, values, mask).unwrap();
    out.x_true = DenseMatrix::from_row_major(m, n, truth).unwrap();
    out
}

pub fn test_rows_never_reach_fitting(seed: u64) -> Check {
    let mut r = rng(seed, 60);
    let spec = small_spec(&mut r, seed);
    let inst = synth::generate_instance(&spec).unwrap();
    let poisoned = poison_test_rows(&inst, &mut r);
    let method = Method::ALL[r.random_range(0..3)];
    let (train, y) = bench::training_data(&inst);
    let params = relative_params(&train, &y, 0.1, 0.1);
    let clean = fit(method, &train, &y, &params)?;
    let (train_p, y_p) = bench::training_data(&poisoned);
    let dirty = fit(method, &train_p, &y_p, &params)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&clean.beta_hat.entries) == bits(&dirty.beta_hat.entries), || {
        format!("{method}: test rows changed the fitted coefficients")
    })
}

pub fn records_are_deterministic(seed: u64) -> Check {
    let mut r = rng(seed, 61);
    let spec = small_spec(&mut r, seed);
    let inst = synth::generate_instance(&spec).unwrap();
    let method = Method::ALL[r.random_range(0..3)];
    let (train, y) = bench::training_data(&inst);
    let params = relative_params(&train, &y, r.random_range(0.02..0.3), r.random_range(0.01..1.2));
    let a = bench::run_method(&inst, method, &params, false);
    let b = bench::run_method(&inst, method, &params, false);
    ensure(
        a.test_rmse.map(f64::to_bits) == b.test_rmse.map(f64::to_bits)
            && a.support_f1 == b.support_f1
            && a.converged == b.converged
            && a.error == b.error
            && a.train_seconds_per_stage.keys().eq(b.train_seconds_per_stage.keys()),
        || format!("{method} records differ beyond timings"),
    )?;
    ensure((0.0..=1.0).contains(&a.support_f1), || format!("f1 {}", a.support_f1))?;
    ensure(a.test_rmse.is_none_or(|v| v.is_finite() && v >= 0.0), || format!("rmse {:?}", a.test_rmse))
}

/// Named invariant suites, in the order the acceptance harness reports them.
pub const INVARIANTS: &[(&str, fn(u64) -> Check)] = &[
    ("svd factors", svd_factors_are_valid),
    ("svt matches oracle", svt_matches_oracle),
    ("svt non-expansive", svt_is_non_expansive),
    ("svt shrinks nuclear norm", svt_shrinks_nuclear_norm),
    ("operator norm triangle", operator_norm_triangle),
    ("least squares orthogonality", least_squares_residual_is_orthogonal),
    ("soft-impute descent", soft_impute_descends),
    ("mask fidelity", soft_impute_ignores_unobserved_values),
    ("lambda to zero", soft_impute_approaches_input_as_lambda_shrinks),
    ("accurate vs quick", accurate_budget_not_worse_than_quick),
    ("lasso KKT", lasso_satisfies_kkt),
    ("lasso objective", lasso_objective_beats_zero_and_least_squares),
    ("lasso extremes", lasso_extremes),
    ("imat support growth", imat_support_grows_below_smallest_coefficient),
    ("support/embed round trip", support_embed_round_trip),
    ("restrict/embed round trip", restrict_embed_round_trip),
    ("pipeline determinism", pipelines_are_deterministic),
    ("pipeline consistency", pipeline_outputs_are_consistent),
    ("generator determinism", generators_are_deterministic),
    ("instance consistency", instance_is_consistent),
    ("cauchy-schwarz chain", cauchy_schwarz_chain_holds),
    ("gamma deviation bound", gamma_deviation_bound_holds),
    ("bound formulas", bound_formulas_are_consistent),
    ("train/test hygiene", test_rows_never_reach_fitting),
    ("record determinism", records_are_deterministic),
];

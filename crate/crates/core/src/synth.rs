//! Seeded synthetic experiments: low-rank Gaussian designs, Bernoulli
//! masking, sparse parameters, noisy labels and the 4/5 train/test split.
//!
//! Every generator draws from its own ChaCha stream selected by
//! `(seed, purpose)`, so adding a generator never shifts the draws of another.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::completion::MaskedMatrix;
use crate::error::{invalid_argument, invalid_input, Result};
use crate::linalg::{self, DenseMatrix};
use crate::sparse::SparseVector;

/// Smallest magnitude of a nonzero coefficient drawn by [`gen_sparse_beta`].
pub const MIN_NONZERO_MAGNITUDE: f64 = 0.1;

/// Version tag written into instance headers.
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Matrix = 1,
    Mask = 2,
    Beta = 3,
    Noise = 4,
    Split = 5,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_array_unchecked(Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub m: usize,
    pub n: usize,
    /// Target rank.
    pub r: usize,
    /// Number of nonzero parameters.
    pub s: usize,
    /// Probability that an entry is observed.
    pub alpha_obs: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Harness defaults: rank `min(m, n) / 5`, 15-sparse, half observed, unit noise.
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        Self { m, n, r: (m.min(n) / 5).max(1), s: 15.min(n), alpha_obs: 0.5, noise_sigma: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 5 || self.n == 0 {
            return Err(invalid_argument(format!("need m >= 5 and n >= 1, got {}x{}", self.m, self.n)));
        }
        if self.r > self.m.min(self.n) {
            return Err(invalid_argument(format!("rank {} exceeds min(m, n)", self.r)));
        }
        if self.s > self.n {
            return Err(invalid_argument(format!("sparsity {} exceeds n = {}", self.s, self.n)));
        }
        if !(self.alpha_obs > 0.0 && self.alpha_obs <= 1.0) {
            return Err(invalid_argument(format!("alpha_obs must lie in (0, 1], got {}", self.alpha_obs)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid_argument("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub spec: ExperimentSpec,
    /// The complete design before masking.
    pub x_true: DenseMatrix,
    pub masked: MaskedMatrix,
    pub beta_true: SparseVector,
    pub y: Vec<f64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// `U diag(|g|) V^T` with `U`, `V` orthonormalized standard-Gaussian matrices.
pub fn gen_low_rank(m: usize, n: usize, r: usize, seed: u64) -> Result<DenseMatrix> {
    if m == 0 || n == 0 {
        return Err(invalid_argument("dimensions must be positive"));
    }
    if r > m.min(n) {
        return Err(invalid_argument(format!("rank {r} exceeds min({m}, {n})")));
    }
    if r == 0 {
        return Ok(DenseMatrix::zeros(m, n));
    }
    let mut rng = rng_for(seed, Stream::Matrix);
    let u = linalg::orthonormal_columns(&gaussian_matrix(m, r, &mut rng));
    let v = linalg::orthonormal_columns(&gaussian_matrix(n, r, &mut rng));
    let sigma: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).map(f64::abs).collect();
    let scaled = DenseMatrix::from_array_unchecked(u.as_array() * &ndarray::Array1::from(sigma));
    scaled.matmul(&v.transpose())
}

/// Observes each entry independently with probability `alpha_obs`.
pub fn apply_bernoulli_mask(m: &DenseMatrix, alpha_obs: f64, seed: u64) -> Result<MaskedMatrix> {
    if !(0.0..=1.0).contains(&alpha_obs) {
        return Err(invalid_argument(format!("alpha_obs must lie in [0, 1], got {alpha_obs}")));
    }
    let mut rng = rng_for(seed, Stream::Mask);
    let mask = Array2::from_shape_fn(m.shape(), |_| rng.random::<f64>() < alpha_obs);
    MaskedMatrix::new(m.as_array().clone(), mask)
}

/// Exactly `s` nonzeros at uniform positions, standard Gaussian values with
/// magnitude at least [`MIN_NONZERO_MAGNITUDE`].
pub fn gen_sparse_beta(n: usize, s: usize, seed: u64) -> Result<SparseVector> {
    if s > n {
        return Err(invalid_argument(format!("sparsity {s} exceeds length {n}")));
    }
    let mut rng = rng_for(seed, Stream::Beta);
    let mut positions = index::sample(&mut rng, n, s).into_vec();
    positions.sort_unstable();
    let mut entries = vec![0.0; n];
    for idx in positions {
        entries[idx] = loop {
            let v: f64 = StandardNormal.sample(&mut rng);
            if v.abs() >= MIN_NONZERO_MAGNITUDE {
                break v;
            }
        };
    }
    SparseVector::new(entries)
}

/// `y = X beta + noise_sigma * g`, `g` standard Gaussian of length `m`.
pub fn gen_labels(x: &DenseMatrix, beta: &SparseVector, noise_sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(noise_sigma >= 0.0) {
        return Err(invalid_argument("noise_sigma must be >= 0"));
    }
    let mut y = x.matvec(beta.as_slice())?;
    let mut rng = rng_for(seed, Stream::Noise);
    for v in &mut y {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v += noise_sigma * g;
    }
    Ok(y)
}

/// Uniformly random partition of `0..m` with `round(4m/5)` training rows.
/// Both index lists are returned in ascending order.
pub fn split_train_test(m: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < 5 {
        return Err(invalid_argument(format!("need at least 5 rows to split, got {m}")));
    }
    let n_train = (8 * m + 5) / 10;
    let mut rows: Vec<usize> = (0..m).collect();
    rows.shuffle(&mut rng_for(seed, Stream::Split));
    let mut train = rows[..n_train].to_vec();
    let mut test = rows[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn generate_instance(spec: &ExperimentSpec) -> Result<Instance> {
    spec.validate()?;
    let x_true = gen_low_rank(spec.m, spec.n, spec.r, spec.seed)?;
    let masked = apply_bernoulli_mask(&x_true, spec.alpha_obs, spec.seed)?;
    let beta_true = gen_sparse_beta(spec.n, spec.s, spec.seed)?;
    let y = gen_labels(&x_true, &beta_true, spec.noise_sigma, spec.seed)?;
    let (train_rows, test_rows) = split_train_test(spec.m, spec.seed)?;
    Ok(Instance { spec: *spec, x_true, masked, beta_true, y, train_rows, test_rows })
}

/// Contents of `header.json` in an instance directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHeader {
    pub format_version: u32,
    pub spec: ExperimentSpec,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

pub const HEADER_FILE: &str = "header.json";
pub const VALUES_FILE: &str = "x_true.csv";
pub const MASK_FILE: &str = "mask.csv";
pub const BETA_FILE: &str = "beta.csv";
pub const LABELS_FILE: &str = "y.csv";

fn write_rows<I, R>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| invalid_input(format!("{}: cannot parse `{field}` as a number", path.display())))
}

/// Writes an instance as a directory of CSV files plus a JSON header.
///
/// * `header.json` - `{format_version, spec: {m, n, r, s, alpha_obs, noise_sigma, seed}, train_rows, test_rows}`
/// * `x_true.csv` - `m` lines of `n` comma-separated values (the full design)
/// * `mask.csv` - `m` lines of `n` comma-separated `0`/`1` flags, `1` = observed
/// * `beta.csv`, `y.csv` - one value per line
pub fn write_instance(instance: &Instance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = InstanceHeader {
        format_version: INSTANCE_FORMAT_VERSION,
        spec: instance.spec,
        train_rows: instance.train_rows.clone(),
        test_rows: instance.test_rows.clone(),
    };
    fs::write(dir.join(HEADER_FILE), serde_json::to_string_pretty(&header)?)?;
    write_rows(
        &dir.join(VALUES_FILE),
        instance.x_true.as_array().rows().into_iter().map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>()),
    )?;
    write_rows(
        &dir.join(MASK_FILE),
        instance
            .masked
            .mask()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&b| if b { "1" } else { "0" }.to_string()).collect::<Vec<_>>()),
    )?;
    write_rows(&dir.join(BETA_FILE), instance.beta_true.entries.iter().map(|v| vec![v.to_string()]))?;
    write_rows(&dir.join(LABELS_FILE), instance.y.iter().map(|v| vec![v.to_string()]))?;
    Ok(())
}

pub fn read_instance(dir: &Path) -> Result<Instance> {
    let header: InstanceHeader = serde_json::from_str(&fs::read_to_string(dir.join(HEADER_FILE))?)?;
    if header.format_version != INSTANCE_FORMAT_VERSION {
        return Err(invalid_input(format!("unsupported instance format {}", header.format_version)));
    }
    let spec = header.spec;

    let path = dir.join(VALUES_FILE);
    let rows = read_rows(&path)?;
    let mut values = Vec::with_capacity(spec.m * spec.n);
    for row in &rows {
        for field in row {
            values.push(parse_f64(field, &path)?);
        }
    }
    let x_true = DenseMatrix::from_row_major(spec.m, spec.n, values)?;

    let path = dir.join(MASK_FILE);
    let mut mask = Vec::with_capacity(spec.m * spec.n);
    for row in read_rows(&path)? {
        for field in row {
            mask.push(match field.trim() {
                "1" => true,
                "0" => false,
                other => return Err(invalid_input(format!("{}: bad mask flag `{other}`", path.display()))),
            });
        }
    }
    let mask = Array2::from_shape_vec((spec.m, spec.n), mask)
        .map_err(|_| invalid_input("mask shape does not match header"))?;
    let masked = MaskedMatrix::new(x_true.as_array().clone(), mask)?;

    let read_vector = |name: &str, len: usize| -> Result<Vec<f64>> {
        let path = dir.join(name);
        let v = read_rows(&path)?
            .iter()
            .map(|r| parse_f64(r.first().map_or("", String::as_str), &path))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != len {
            return Err(invalid_input(format!("{}: expected {len} values, got {}", path.display(), v.len())));
        }
        Ok(v)
    };
    let beta_true = SparseVector::new(read_vector(BETA_FILE, spec.n)?)?;
    let y = read_vector(LABELS_FILE, spec.m)?;

    Ok(Instance {
        spec,
        x_true,
        masked,
        beta_true,
        y,
        train_rows: header.train_rows,
        test_rows: header.test_rows,
    })
}

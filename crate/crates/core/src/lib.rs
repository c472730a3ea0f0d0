//! Sparse parameter recovery in linear models `y = X beta + noise` whose
//! low-rank design matrix `X` is only partially observed.
//!
//! The crate provides Soft-Impute matrix completion, LASSO and IMATCS sparse
//! solvers, the two-step / four-step / augmented four-step recovery pipelines
//! built from them, a seeded synthetic-data generator, a numerical audit of the
//! recovery error bounds, and a benchmarking harness.

pub mod bench;
pub mod completion;
pub mod diagnostics;
mod error;
pub mod linalg;
pub mod pipelines;
pub mod sparse;
pub mod synth;

pub use completion::{Budget, CompletionConfig, CompletionResult, MaskedMatrix};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdFactors};
pub use pipelines::{PipelineParams, RecoveryResult, SparseSolver};
pub use sparse::SparseVector;
pub use synth::{ExperimentSpec, Instance};

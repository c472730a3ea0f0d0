//! C ABI over the `lrsparse` recovery library.
//!
//! Conventions shared by every function:
//! - the return value is an [`LrsStatus`]; on anything but `LRS_STATUS_OK` a
//!   message is available from [`lrs_last_error_message`] on the same thread;
//! - handles are created by `*_generate`, `*_read` or `*_recover` and must be
//!   released with the matching `*_free`; freeing NULL is a no-op;
//! - matrices are dense, row-major `double` arrays; masks are row-major bytes
//!   where any nonzero byte marks an observed entry;
//! - enum-typed arguments travel as `uint32_t` so that out-of-range values are
//!   rejected with `LRS_STATUS_INVALID_ARGUMENT` instead of being undefined.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lrsparse::bench::{self, LambdaReference, LambdaScale, Method};
use lrsparse::completion::{soft_impute, Budget, CompletionConfig, MaskedMatrix};
use lrsparse::pipelines::{CompletionLimits, PipelineParams, RecoveryResult, SparseSolver};
use lrsparse::synth::{self, ExperimentSpec, Instance};
use lrsparse::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvalidArgument = 3,
    DegenerateInput = 4,
    /// The support estimate came out empty. The recovery handle is still
    /// written and holds the all-zero estimate.
    EmptySupport = 5,
    Factorization = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsMethod {
    TwoStep = 0,
    FourStep = 1,
    AugmentedFourStep = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsSolver {
    Lasso = 0,
    Imatcs = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsBudget {
    Quick = 0,
    Accurate = 1,
}

/// Parameters of a synthetic instance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LrsSpec {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub sparsity: usize,
    pub alpha_obs: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Pipeline parameters. Solver fields hold `LrsSolver` values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LrsParams {
    pub epsilon: f64,
    pub alpha_stop: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub support_solver: u32,
    pub final_solver: u32,
    pub max_outer_iters: usize,
    pub quick_max_iters: usize,
    pub quick_rel_tol: f64,
    pub accurate_max_iters: usize,
    pub accurate_rel_tol: f64,
    pub zero_tol: f64,
}

/// Opaque synthetic instance.
pub struct LrsInstance(Instance);

/// Opaque recovery result.
pub struct LrsRecovery(RecoveryResult);

struct Failure {
    status: LrsStatus,
    message: String,
}

impl Failure {
    fn new(status: LrsStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::Csv(_) | Error::Json(_) => LrsStatus::InvalidInput,
            Error::InvalidArgument(_) => LrsStatus::InvalidArgument,
            Error::DegenerateInput(_) => LrsStatus::DegenerateInput,
            Error::EmptySupport(_) => LrsStatus::EmptySupport,
            Error::Factorization(_) => LrsStatus::Factorization,
            Error::Io(_) => LrsStatus::Io,
            _ => LrsStatus::Internal,
        };
        Self::new(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn guard(body: impl FnOnce() -> FfiResult) -> LrsStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LrsStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {detail}"));
            LrsStatus::Panic
        }
    }
}

fn non_null<'a, T>(ptr: *const T, name: &str) -> FfiResult<&'a T> {
    unsafe { ptr.as_ref() }.ok_or_else(|| Failure::new(LrsStatus::NullPointer, format!("`{name}` is NULL")))
}

fn out_ptr<'a, T>(ptr: *mut T, name: &str) -> FfiResult<&'a mut T> {
    unsafe { ptr.as_mut() }.ok_or_else(|| Failure::new(LrsStatus::NullPointer, format!("`{name}` is NULL")))
}

fn slice_in<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(ptr, name)?;
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn slice_out<'a, T>(ptr: *mut T, len: usize, needed: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if len < needed {
        return Err(Failure::new(
            LrsStatus::BufferTooSmall,
            format!("`{name}` holds {len} entries, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    out_ptr(ptr, name)?;
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, needed) })
}

fn path_arg<'a>(ptr: *const c_char, name: &str) -> FfiResult<&'a Path> {
    non_null(ptr, name)?;
    let text = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Failure::new(LrsStatus::InvalidArgument, format!("`{name}` is not UTF-8")))?;
    Ok(Path::new(text))
}

fn method_arg(code: u32) -> FfiResult<Method> {
    match code {
        0 => Ok(Method::TwoStep),
        1 => Ok(Method::FourStep),
        2 => Ok(Method::AugmentedFourStep),
        _ => Err(Failure::new(LrsStatus::InvalidArgument, format!("unknown method code {code}"))),
    }
}

fn solver_arg(code: u32) -> FfiResult<SparseSolver> {
    match code {
        0 => Ok(SparseSolver::Lasso),
        1 => Ok(SparseSolver::Imatcs),
        _ => Err(Failure::new(LrsStatus::InvalidArgument, format!("unknown solver code {code}"))),
    }
}

fn solver_code(solver: SparseSolver) -> u32 {
    match solver {
        SparseSolver::Lasso => LrsSolver::Lasso as u32,
        SparseSolver::Imatcs => LrsSolver::Imatcs as u32,
    }
}

fn budget_arg(code: u32) -> FfiResult<Budget> {
    match code {
        0 => Ok(Budget::Quick),
        1 => Ok(Budget::Accurate),
        _ => Err(Failure::new(LrsStatus::InvalidArgument, format!("unknown budget code {code}"))),
    }
}

fn params_arg(p: &LrsParams) -> FfiResult<PipelineParams> {
    let params = PipelineParams {
        epsilon: p.epsilon,
        alpha_stop: p.alpha_stop,
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        support_solver: solver_arg(p.support_solver)?,
        final_solver: solver_arg(p.final_solver)?,
        max_outer_iters: p.max_outer_iters,
        quick: CompletionLimits { max_iters: p.quick_max_iters, rel_tol: p.quick_rel_tol },
        accurate: CompletionLimits { max_iters: p.accurate_max_iters, rel_tol: p.accurate_rel_tol },
        zero_tol: p.zero_tol,
    };
    params.validate()?;
    Ok(params)
}

fn masked_arg(rows: usize, cols: usize, values: *const f64, observed: *const u8) -> FfiResult<MaskedMatrix> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::new(LrsStatus::InvalidArgument, "rows * cols overflows"))?;
    let values = slice_in(values, len, "values")?;
    let observed = slice_in(observed, len, "observed")?;
    Ok(MaskedMatrix::from_row_major(rows, cols, values.to_vec(), observed.iter().map(|&b| b != 0).collect())?)
}

fn store<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Runs `method` and stores the result, including the partial result of an
/// empty support.
fn recover_into(
    method: Method,
    input: &MaskedMatrix,
    y: &[f64],
    params: &PipelineParams,
    out: &mut *mut LrsRecovery,
) -> FfiResult {
    match method.fit(input, y, params) {
        Ok(result) => {
            store(out, LrsRecovery(result));
            Ok(())
        }
        Err(Error::EmptySupport(partial)) => {
            store(out, LrsRecovery(*partial));
            Err(Failure::new(LrsStatus::EmptySupport, "support estimate is empty after phase A"))
        }
        Err(e) => Err(e.into()),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lrs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn lrs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Instance parameters with the default rank, sparsity, observation rate and noise.
#[no_mangle]
pub extern "C" fn lrs_spec_default(m: usize, n: usize, seed: u64) -> LrsSpec {
    let s = ExperimentSpec::new(m, n, seed);
    LrsSpec {
        m: s.m,
        n: s.n,
        rank: s.r,
        sparsity: s.s,
        alpha_obs: s.alpha_obs,
        noise_sigma: s.noise_sigma,
        seed: s.seed,
    }
}

/// Default pipeline parameters; both lambdas are zero and must be set.
#[no_mangle]
pub extern "C" fn lrs_params_default() -> LrsParams {
    let p = PipelineParams::default();
    LrsParams {
        epsilon: p.epsilon,
        alpha_stop: p.alpha_stop,
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        support_solver: solver_code(p.support_solver),
        final_solver: solver_code(p.final_solver),
        max_outer_iters: p.max_outer_iters,
        quick_max_iters: p.quick.max_iters,
        quick_rel_tol: p.quick.rel_tol,
        accurate_max_iters: p.accurate.max_iters,
        accurate_rel_tol: p.accurate.rel_tol,
        zero_tol: p.zero_tol,
    }
}

#[no_mangle]
pub unsafe extern "C" fn lrs_instance_generate(spec: *const LrsSpec, out: *mut *mut LrsInstance) -> LrsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = non_null(spec, "spec")?;
        let spec = ExperimentSpec {
            m: s.m,
            n: s.n,
            r: s.rank,
            s: s.sparsity,
            alpha_obs: s.alpha_obs,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
        };
        store(out, LrsInstance(synth::generate_instance(&spec)?));
        Ok(())
    })
}

/// Loads an instance directory written by [`lrs_instance_write`] or the CLI.
#[no_mangle]
pub unsafe extern "C" fn lrs_instance_read(dir: *const c_char, out: *mut *mut LrsInstance) -> LrsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        store(out, LrsInstance(synth::read_instance(path_arg(dir, "dir")?)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lrs_instance_write(instance: *const LrsInstance, dir: *const c_char) -> LrsStatus {
    guard(|| {
        let instance = non_null(instance, "instance")?;
        synth::write_instance(&instance.0, path_arg(dir, "dir")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lrs_instance_free(instance: *mut LrsInstance) {
    if !instance.is_null() {
        drop(unsafe { Box::from_raw(instance) });
    }
}

#[no_mangle]
pub unsafe extern "C" fn lrs_instance_dims(instance: *const LrsInstance, m: *mut usize, n: *mut usize) -> LrsStatus {
    guard(|| {
        let instance = non_null(instance, "instance")?;
        *out_ptr(m, "m")? = instance.0.spec.m;
        *out_ptr(n, "n")? = instance.0.spec.n;
        Ok(())
    })
}

/// Copies the `n` true coefficients into `buf`.
#[no_mangle]
pub unsafe extern "C" fn lrs_instance_copy_beta_true(
    instance: *const LrsInstance,
    buf: *mut f64,
    len: usize,
) -> LrsStatus {
    guard(|| {
        let beta = &non_null(instance, "instance")?.0.beta_true.entries;
        slice_out(buf, len, beta.len(), "buf")?.copy_from_slice(beta);
        Ok(())
    })
}

/// Fits `method` on the training rows of `instance`.
#[no_mangle]
pub unsafe extern "C" fn lrs_instance_recover(
    instance: *const LrsInstance,
    method: u32,
    params: *const LrsParams,
    out: *mut *mut LrsRecovery,
) -> LrsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let instance = non_null(instance, "instance")?;
        let method = method_arg(method)?;
        let params = params_arg(non_null(params, "params")?)?;
        let (train, y) = bench::training_data(&instance.0);
        recover_into(method, &train, &y, &params, out)
    })
}

/// Fits `method` on a caller-supplied `rows x cols` design and `rows` labels.
#[no_mangle]
pub unsafe extern "C" fn lrs_recover(
    rows: usize,
    cols: usize,
    values: *const f64,
    observed: *const u8,
    y: *const f64,
    method: u32,
    params: *const LrsParams,
    out: *mut *mut LrsRecovery,
) -> LrsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let input = masked_arg(rows, cols, values, observed)?;
        let y = slice_in(y, rows, "y")?;
        let method = method_arg(method)?;
        let params = params_arg(non_null(params, "params")?)?;
        recover_into(method, &input, y, &params, out)
    })
}

/// Converts relative weights into absolute ones: `lambda1` is scaled by the
/// operator norm of the zero-filled design, `lambda2` by `2 ||X^T y||_inf`.
#[no_mangle]
pub unsafe extern "C" fn lrs_relative_lambdas(
    rows: usize,
    cols: usize,
    values: *const f64,
    observed: *const u8,
    y: *const f64,
    lambda1_fraction: f64,
    lambda2_fraction: f64,
    lambda1: *mut f64,
    lambda2: *mut f64,
) -> LrsStatus {
    guard(|| {
        let lambda1 = out_ptr(lambda1, "lambda1")?;
        let lambda2 = out_ptr(lambda2, "lambda2")?;
        let input = masked_arg(rows, cols, values, observed)?;
        let y = slice_in(y, rows, "y")?;
        let reference = LambdaReference::of(&input, y)?;
        (*lambda1, *lambda2) = reference.resolve(LambdaScale::Relative, lambda1_fraction, lambda2_fraction);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_free(recovery: *mut LrsRecovery) {
    if !recovery.is_null() {
        drop(unsafe { Box::from_raw(recovery) });
    }
}

/// Number of coefficients, i.e. the design's column count.
#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_len(recovery: *const LrsRecovery) -> usize {
    unsafe { recovery.as_ref() }.map_or(0, |r| r.0.beta_hat.len())
}

#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_converged(recovery: *const LrsRecovery) -> bool {
    unsafe { recovery.as_ref() }.is_some_and(|r| r.0.converged)
}

#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_copy_beta(recovery: *const LrsRecovery, buf: *mut f64, len: usize) -> LrsStatus {
    guard(|| {
        let beta = &non_null(recovery, "recovery")?.0.beta_hat.entries;
        slice_out(buf, len, beta.len(), "buf")?.copy_from_slice(beta);
        Ok(())
    })
}

/// Number of columns in the estimated support.
#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_support_len(recovery: *const LrsRecovery) -> usize {
    unsafe { recovery.as_ref() }.map_or(0, |r| r.0.support_estimate.len())
}

/// Copies the ascending support indices into `buf`.
#[no_mangle]
pub unsafe extern "C" fn lrs_recovery_copy_support(
    recovery: *const LrsRecovery,
    buf: *mut usize,
    len: usize,
) -> LrsStatus {
    guard(|| {
        let support = &non_null(recovery, "recovery")?.0.support_estimate;
        slice_out(buf, len, support.len(), "buf")?.copy_from_slice(support);
        Ok(())
    })
}

/// Completes a `rows x cols` matrix into `out` (row-major, `rows * cols`
/// entries). `iterations`, when not NULL, receives the iteration count.
#[no_mangle]
pub unsafe extern "C" fn lrs_soft_impute(
    rows: usize,
    cols: usize,
    values: *const f64,
    observed: *const u8,
    lambda1: f64,
    budget: u32,
    out: *mut f64,
    out_len: usize,
    iterations: *mut usize,
) -> LrsStatus {
    guard(|| {
        let input = masked_arg(rows, cols, values, observed)?;
        let cfg = CompletionConfig::new(lambda1, budget_arg(budget)?);
        let buf = slice_out(out, out_len, rows * cols, "out")?;
        let result = soft_impute(&input, &cfg)?;
        buf.copy_from_slice(result.completed.as_slice());
        if let Some(slot) = unsafe { iterations.as_mut() } {
            *slot = result.iterations_used;
        }
        Ok(())
    })
}

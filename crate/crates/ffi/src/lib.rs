//! C interface to `rlp-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every function returns an
//! [`RlpStatus`]; on failure the message is available from
//! [`rlp_last_error_message`] on the same thread until the next call.
//! Matrices are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rlp_core::batching::{self, BatchSet};
use rlp_core::linalg::{self, DenseMatrix};
use rlp_core::loss;
use rlp_core::model::{self, Architecture, ModelParams};
use rlp_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    DataError = 4,
    NumericFailure = 5,
    Exhausted = 6,
    IoError = 7,
    ConfigError = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlpArchitecture {
    /// d → width → 1 with ReLU.
    Regression = 0,
    /// d → width → d with ReLU then sigmoid.
    Autoencoder = 1,
    /// 2 → 2 two-class classifier.
    MoonsClassifier = 2,
}

pub struct RlpMatrix(DenseMatrix);
pub struct RlpModel(ModelParams);
pub struct RlpBatchSet(BatchSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(RlpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => RlpStatus::ShapeMismatch,
            Error::Data(_)
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::DegenerateSplit { .. } => RlpStatus::DataError,
            Error::Numeric(_) => RlpStatus::NumericFailure,
            Error::Exhausted { .. } => RlpStatus::Exhausted,
            Error::Io { .. } => RlpStatus::IoError,
            Error::Config(_) | Error::Verification(_) => RlpStatus::ConfigError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RlpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RlpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RlpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RlpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            RlpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn rlp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rlp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut RlpMatrix,
) -> RlpStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))?;
        let values = slice(data, len, "data")?.to_vec();
        let m = DenseMatrix::from_vec(rows, cols, values)?;
        put(out, RlpMatrix(m), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rlp_matrix_free(m: *mut RlpMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_matrix_shape(m: *const RlpMatrix, rows: *mut usize, cols: *mut usize) -> RlpStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        if rows.is_null() || cols.is_null() {
            return Err(null("shape output"));
        }
        *rows = m.0.rows();
        *cols = m.0.cols();
        Ok(())
    })
}

/// Copies the row-major contents into `buf`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live matrix handle; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rlp_matrix_copy(m: *const RlpMatrix, buf: *mut f64, len: usize) -> RlpStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let data = m.0.data();
        if len < data.len() {
            return Err(invalid(format!("buffer holds {len} values, matrix has {}", data.len())));
        }
        if buf.is_null() && !data.is_empty() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Minimum-norm least-squares solution of `x · s ≈ b`; `rank` may be null.
///
/// # Safety
/// `x` and `b` must be live matrix handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_least_squares(
    x: *const RlpMatrix,
    b: *const RlpMatrix,
    rtol: f64,
    out: *mut *mut RlpMatrix,
    rank: *mut usize,
) -> RlpStatus {
    guard(|| {
        let (x, b) = (deref(x, "x")?, deref(b, "b")?);
        if rtol.is_nan() || rtol < 0.0 {
            return Err(invalid("rtol must be non-negative"));
        }
        let r = linalg::least_squares_project(&x.0, &b.0, rtol)?;
        if !rank.is_null() {
            *rank = r.rank;
        }
        put(out, RlpMatrix(r.solution), "out")
    })
}

/// Hyperplane loss of one batch: `xb` is M×d, `yb` and `hb` are M×c and
/// `probe` holds d values. The loss goes to `value`; when `grad` is not
/// null it receives a new M×c matrix with the derivative in `hb`.
///
/// # Safety
/// Handles must be live, `probe` must hold `probe_len` doubles and `value`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_loss_batch(
    xb: *const RlpMatrix,
    yb: *const RlpMatrix,
    hb: *const RlpMatrix,
    probe: *const f64,
    probe_len: usize,
    value: *mut f64,
    grad: *mut *mut RlpMatrix,
) -> RlpStatus {
    guard(|| {
        let (xb, yb, hb) = (deref(xb, "xb")?, deref(yb, "yb")?, deref(hb, "hb")?);
        let probe = slice(probe, probe_len, "probe")?;
        if value.is_null() {
            return Err(null("value"));
        }
        let out = loss::rlp_batch(&xb.0, &yb.0, &hb.0, probe)?;
        *value = out.value;
        if !grad.is_null() {
            put(grad, RlpMatrix(out.dl_dh), "grad")?;
        }
        Ok(())
    })
}

/// Mean over rows of the squared error summed across outputs.
///
/// # Safety
/// Handles must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_loss_mse(h: *const RlpMatrix, y: *const RlpMatrix, value: *mut f64) -> RlpStatus {
    guard(|| {
        let (h, y) = (deref(h, "h")?, deref(y, "y")?);
        if value.is_null() {
            return Err(null("value"));
        }
        *value = loss::mse(&h.0, &y.0)?.value;
        Ok(())
    })
}

/// Builds a freshly initialized network. `width` is the hidden or latent
/// size; `sigmoid_head` only affects the classifier.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_build(
    architecture: RlpArchitecture,
    input_dim: usize,
    width: usize,
    sigmoid_head: bool,
    seed: u64,
    out: *mut *mut RlpModel,
) -> RlpStatus {
    guard(|| {
        if input_dim == 0 || (width == 0 && architecture != RlpArchitecture::MoonsClassifier) {
            return Err(invalid("dimensions must be positive"));
        }
        let arch = match architecture {
            RlpArchitecture::Regression => Architecture::Regression { hidden: width },
            RlpArchitecture::Autoencoder => Architecture::Autoencoder { latent: width },
            RlpArchitecture::MoonsClassifier => Architecture::MoonsClassifier { sigmoid_head },
        };
        put(out, RlpModel(arch.build(input_dim, seed)), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_free(m: *mut RlpModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live model handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_info(
    m: *const RlpModel,
    input_dim: *mut usize,
    output_dim: *mut usize,
    param_count: *mut usize,
) -> RlpStatus {
    guard(|| {
        let m = deref(m, "model")?;
        if input_dim.is_null() || output_dim.is_null() || param_count.is_null() {
            return Err(null("info output"));
        }
        *input_dim = m.0.input_dim();
        *output_dim = m.0.output_dim();
        *param_count = m.0.param_count();
        Ok(())
    })
}

/// Network outputs for the rows of `x`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_forward(
    m: *const RlpModel,
    x: *const RlpMatrix,
    out: *mut *mut RlpMatrix,
) -> RlpStatus {
    guard(|| {
        let (m, x) = (deref(m, "model")?, deref(x, "x")?);
        let h = model::predict(&m.0, &x.0)?;
        put(out, RlpMatrix(h), "out")
    })
}

/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_save(m: *const RlpModel, path: *const c_char) -> RlpStatus {
    guard(|| {
        let m = deref(m, "model")?;
        model::save_checkpoint(&m.0, &path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_model_load(path: *const c_char, out: *mut *mut RlpModel) -> RlpStatus {
    guard(|| {
        let params = model::load_checkpoint(&path_arg(path)?)?;
        put(out, RlpModel(params), "out")
    })
}

/// `k` distinct batches of `m` indices from `0..n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_batches_generate(
    n: usize,
    m: usize,
    k: usize,
    seed: u64,
    out: *mut *mut RlpBatchSet,
) -> RlpStatus {
    guard(|| {
        let bs = batching::balanced_batches(n, m, k, seed)?;
        put(out, RlpBatchSet(bs), "out")
    })
}

/// # Safety
/// `b` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rlp_batches_free(b: *mut RlpBatchSet) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live handle; `count` and `batch_size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlp_batches_shape(
    b: *const RlpBatchSet,
    count: *mut usize,
    batch_size: *mut usize,
) -> RlpStatus {
    guard(|| {
        let b = deref(b, "batch set")?;
        if count.is_null() || batch_size.is_null() {
            return Err(null("shape output"));
        }
        *count = b.0.len();
        *batch_size = b.0.batch_size();
        Ok(())
    })
}

/// Copies the indices of batch `index` into `buf`, which holds `len` values.
///
/// # Safety
/// `b` must be a live handle; `buf` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rlp_batches_get(
    b: *const RlpBatchSet,
    index: usize,
    buf: *mut usize,
    len: usize,
) -> RlpStatus {
    guard(|| {
        let b = deref(b, "batch set")?;
        let batch = b
            .0
            .batches
            .get(index)
            .ok_or_else(|| invalid(format!("batch {index} of {}", b.0.len())))?;
        if len < batch.len() {
            return Err(invalid(format!("buffer holds {len} values, batch has {}", batch.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(batch.as_ptr(), buf, batch.len());
        Ok(())
    })
}

//! C interface to echochan.
//!
//! Models and datasets are opaque handles created by `*_load` and released
//! with `*_free`. Every fallible call returns an [`EchochanStatus`]; on
//! failure a message is available from [`echochan_last_error`] on the same
//! thread. Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use echochan::dataset::SequenceDataset;
use echochan::error::{Error, ErrorCategory};
use echochan::eval::{self, MetricReport};
use echochan::numerics::{self, Matrix};
use echochan::store::{self, ModelArtifact};

/// Result of every fallible call. Values 2, 3 and 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchochanStatus {
    Ok = 0,
    /// A required pointer argument was null, or a string was not UTF-8.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    /// The output buffer is too small; the required length is reported.
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Aggregate metrics, mirroring the Rust `MetricReport`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EchochanReport {
    pub mape_percent: f64,
    pub mse: f64,
    pub samples_used: u64,
    pub samples_excluded: u64,
    pub wall_time_seconds: f64,
}

impl From<MetricReport> for EchochanReport {
    fn from(r: MetricReport) -> Self {
        EchochanReport {
            mape_percent: r.mape_percent,
            mse: r.mse,
            samples_used: r.samples_used,
            samples_excluded: r.samples_excluded,
            wall_time_seconds: r.wall_time_seconds,
        }
    }
}

/// Opaque trained model.
pub struct EchochanModel {
    inner: ModelArtifact,
}

/// Opaque dataset.
pub struct EchochanDataset {
    inner: SequenceDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: EchochanStatus, msg: impl Into<String>) -> EchochanStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> EchochanStatus {
    let status = match e.category() {
        ErrorCategory::Config => EchochanStatus::Config,
        ErrorCategory::Data => EchochanStatus::Data,
        ErrorCategory::Numeric => EchochanStatus::Numeric,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into `Internal` and clearing the last error on success.
fn guard(f: impl FnOnce() -> EchochanStatus) -> EchochanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == EchochanStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(EchochanStatus::Internal, "internal panic"),
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, EchochanStatus> {
    if path.is_null() {
        return Err(fail(EchochanStatus::InvalidArgument, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(EchochanStatus::InvalidArgument, "path is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(EchochanStatus::InvalidArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn echochan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next echochan call on the same thread.
#[no_mangle]
pub extern "C" fn echochan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads an `ESN1` model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn echochan_model_load(path: *const c_char, out: *mut *mut EchochanModel) -> EchochanStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match store::load_model(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EchochanModel { inner }));
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `echochan_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn echochan_model_free(model: *mut EchochanModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension K, reservoir size N, output dimension L and washout.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn echochan_model_dims(
    model: *const EchochanModel,
    k: *mut usize,
    n: *mut usize,
    l: *mut usize,
    washout: *mut usize,
) -> EchochanStatus {
    guard(|| {
        non_null!(model, k, n, l, washout);
        let r = &(*model).inner.reservoir;
        *k = r.input_dim();
        *n = r.size();
        *l = r.output_dim();
        *washout = r.config().washout;
        EchochanStatus::Ok
    })
}

/// Runs the model over one input sequence.
///
/// `inputs` is K × `t_len`, row-major. `out` receives L × (`t_len` − washout),
/// row-major; `out_len` is its capacity in doubles. If it is too small,
/// `BufferTooSmall` is returned and `*required` (when non-null) holds the
/// needed length.
///
/// # Safety
/// `inputs` must hold K·`t_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echochan_model_predict(
    model: *const EchochanModel,
    inputs: *const f64,
    t_len: usize,
    out: *mut f64,
    out_len: usize,
    required: *mut usize,
) -> EchochanStatus {
    guard(|| {
        non_null!(model, inputs, out);
        let a = &(*model).inner;
        let (k, l) = (a.reservoir.input_dim(), a.reservoir.output_dim());
        let washout = a.reservoir.config().washout;
        let need = l * t_len.saturating_sub(washout);
        if !required.is_null() {
            *required = need;
        }
        if out_len < need {
            return fail(
                EchochanStatus::BufferTooSmall,
                format!("output needs {need} doubles, got {out_len}"),
            );
        }
        let u = match Matrix::from_vec(k, t_len, std::slice::from_raw_parts(inputs, k * t_len).to_vec()) {
            Ok(u) => u,
            Err(e) => return from_error(e),
        };
        if a.reservoir.config().use_feedback {
            return fail(
                EchochanStatus::Config,
                "predict is not available for feedback reservoirs; use echochan_evaluate",
            );
        }
        let pred = a.reservoir.harvest(&u, None).and_then(|traj| a.readout.predict(&traj));
        match pred {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out, need).copy_from_slice(p.as_slice());
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads an `ESD1` dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn echochan_dataset_load(path: *const c_char, out: *mut *mut EchochanDataset) -> EchochanStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match store::load_dataset(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EchochanDataset { inner }));
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` must come from `echochan_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn echochan_dataset_free(dataset: *mut EchochanDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of sequences, sequence length T, and dimensions K and L.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn echochan_dataset_info(
    dataset: *const EchochanDataset,
    count: *mut usize,
    t_len: *mut usize,
    k: *mut usize,
    l: *mut usize,
) -> EchochanStatus {
    guard(|| {
        non_null!(dataset, count, t_len, k, l);
        let d = &(*dataset).inner;
        *count = d.len();
        *t_len = d.seq_len();
        *k = d.input_dim();
        *l = d.output_dim();
        EchochanStatus::Ok
    })
}

/// Scores a model on every sequence of a dataset.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn echochan_evaluate(
    model: *const EchochanModel,
    dataset: *const EchochanDataset,
    out: *mut EchochanReport,
) -> EchochanStatus {
    guard(|| {
        non_null!(model, dataset, out);
        let a = &(*model).inner;
        match eval::evaluate(&a.reservoir, &a.readout, &(*dataset).inner) {
            Ok(r) => {
                *out = r.into();
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Spectral radius of an `n × n` row-major matrix.
///
/// # Safety
/// `m` must hold n·n doubles (it may be NULL when n = 0) and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn echochan_spectral_radius(m: *const f64, n: usize, out: *mut f64) -> EchochanStatus {
    guard(|| {
        non_null!(out);
        let data = if n == 0 {
            Vec::new()
        } else {
            non_null!(m);
            std::slice::from_raw_parts(m, n * n).to_vec()
        };
        let r =
            Matrix::from_vec(n, n, data).and_then(|mat| numerics::spectral_radius(&mat, numerics::DEFAULT_RADIUS_TOL));
        match r {
            Ok(v) => {
                *out = v;
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// MAPE and MSE of two equal-length arrays. Samples with |actual| < `epsilon`
/// are excluded from the MAPE and counted.
///
/// # Safety
/// `actual` and `predicted` must hold `len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn echochan_mape(
    actual: *const f64,
    predicted: *const f64,
    len: usize,
    epsilon: f64,
    out: *mut EchochanReport,
) -> EchochanStatus {
    guard(|| {
        non_null!(actual, predicted, out);
        let a = Matrix::from_vec(1, len, std::slice::from_raw_parts(actual, len).to_vec());
        let f = Matrix::from_vec(1, len, std::slice::from_raw_parts(predicted, len).to_vec());
        match a.and_then(|a| f.and_then(|f| eval::mape(&a, &f, epsilon))) {
            Ok(r) => {
                *out = r.into();
                EchochanStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

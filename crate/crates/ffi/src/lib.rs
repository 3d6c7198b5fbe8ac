//! C ABI over `distlr`.
//!
//! Models and panels cross the boundary as opaque handles created by a
//! `*_load` function and released by the matching `*_free`. Every fallible
//! function returns a [`DistlrStatus`]; on failure a description is kept per
//! thread and can be read with [`distlr_last_error`]. Output pointers are
//! written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use distlr::persist::{load_model, SavedModel};
use distlr::trace::{
    dichotomize_with_threshold, ingest_csv, normalize_log, CsvSchema, Mode, TraceMatrix,
};
use distlr::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistlrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Version = 5,
    Dimension = 6,
    Undefined = 7,
    Fit = 8,
    Panic = 9,
    Other = 10,
}

/// A fitted model loaded from a JSON model file.
pub struct DistlrModel {
    inner: SavedModel,
}

/// A validated trace panel loaded from CSV.
pub struct DistlrMatrix {
    inner: TraceMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DistlrStatus {
    match e {
        Error::Io { .. } => DistlrStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Schema(_) => {
            DistlrStatus::Parse
        }
        Error::Version { .. } => DistlrStatus::Version,
        Error::Dimension { .. } => DistlrStatus::Dimension,
        Error::UndefinedCorrelation(_) | Error::PairDistance { .. } | Error::IndeterminateLr(_) => {
            DistlrStatus::Undefined
        }
        Error::Fit(_) | Error::DegenerateFit(_) => DistlrStatus::Fit,
        Error::Invalid(_) | Error::Mode(_) | Error::Test(_) | Error::Evaluation(_) => {
            DistlrStatus::InvalidArgument
        }
        _ => DistlrStatus::Other,
    }
}

struct Fail(DistlrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DistlrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DistlrStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DistlrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DistlrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DistlrStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or NULL after a
/// success. The string stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn distlr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn distlr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` receives a handle to release with
/// [`distlr_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_load(
    path: *const c_char,
    out: *mut *mut DistlrModel,
) -> DistlrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_arg(out, "out")?;
        let inner = load_model(path)?;
        *out = Box::into_raw(Box::new(DistlrModel { inner }));
        Ok(())
    })
}

/// Releases a model handle; NULL is ignored.
///
/// # Safety
/// `model` must come from [`distlr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_free(model: *mut DistlrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the trace rows the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_n_features(
    model: *const DistlrModel,
    out: *mut usize,
) -> DistlrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.inner.n_features;
        Ok(())
    })
}

/// Applies the preprocessing the model was fitted on (log normalization or
/// dichotomization) to one raw trace of `n` areas, writing `n` values.
///
/// # Safety
/// `raw` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_prepare(
    model: *const DistlrModel,
    raw: *const f64,
    n: usize,
    out: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let raw = slice_arg(raw, n, "raw")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let row = prepare_row(&m.inner, raw)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(&row);
        Ok(())
    })
}

fn prepare_row(model: &SavedModel, raw: &[f64]) -> Result<Vec<f64>, Fail> {
    let t = distlr::trace::Trace {
        subject_id: "a".into(),
        replicate_id: "1".into(),
        gender: distlr::trace::Gender::Unknown,
        age: None,
        features: raw.to_vec(),
    };
    let m = TraceMatrix::new(vec![t], raw.len(), None, Mode::Raw)?;
    let m = match model.input_mode {
        Mode::Raw => m,
        Mode::NormalizedLog => normalize_log(&m)?,
        Mode::Dichotomized => dichotomize_with_threshold(&m, 0.0)?,
    };
    Ok(m.row(0).to_vec())
}

fn check_width(model: &SavedModel, n: usize) -> Result<(), Fail> {
    if n != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            got: n,
        }
        .into());
    }
    Ok(())
}

/// LR for two preprocessed traces of `n` features. `out_log10` may be NULL.
///
/// # Safety
/// `x` and `y` must point to `n` doubles; `out_lr` must be valid.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_lr(
    model: *const DistlrModel,
    x: *const f64,
    y: *const f64,
    n: usize,
    out_lr: *mut f64,
    out_log10: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (x, y) = (slice_arg(x, n, "x")?, slice_arg(y, n, "y")?);
        let out = out_arg(out_lr, "out_lr")?;
        check_width(&m.inner, n)?;
        let lr = m.inner.model.compare(x, y)?;
        *out = lr.lr;
        if let Some(l) = out_log10.as_mut() {
            *l = lr.log10();
        }
        Ok(())
    })
}

/// Posterior probability of the same-source hypothesis for prior `prior_ss`.
///
/// # Safety
/// `x` and `y` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_posterior(
    model: *const DistlrModel,
    x: *const f64,
    y: *const f64,
    n: usize,
    prior_ss: f64,
    out: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (x, y) = (slice_arg(x, n, "x")?, slice_arg(y, n, "y")?);
        let out = out_arg(out, "out")?;
        check_width(&m.inner, n)?;
        *out = m.inner.model.posterior(x, y, prior_ss)?;
        Ok(())
    })
}

/// Loads a panel CSV. On success `*out` receives a handle to release with
/// [`distlr_matrix_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distlr_matrix_load_csv(
    path: *const c_char,
    out: *mut *mut DistlrMatrix,
) -> DistlrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_arg(out, "out")?;
        let inner = ingest_csv(path, &CsvSchema::default())?;
        *out = Box::into_raw(Box::new(DistlrMatrix { inner }));
        Ok(())
    })
}

/// Releases a panel handle; NULL is ignored.
///
/// # Safety
/// `matrix` must come from [`distlr_matrix_load_csv`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn distlr_matrix_free(matrix: *mut DistlrMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Number of traces and features of a panel; either output may be NULL.
///
/// # Safety
/// `matrix` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn distlr_matrix_shape(
    matrix: *const DistlrMatrix,
    n_traces: *mut usize,
    n_features: *mut usize,
) -> DistlrStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        if let Some(t) = n_traces.as_mut() {
            *t = m.inner.len();
        }
        if let Some(f) = n_features.as_mut() {
            *f = m.inner.n_features();
        }
        Ok(())
    })
}

/// Copies row `i` into `out`, which holds `len` doubles (at least the
/// feature count).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn distlr_matrix_row(
    matrix: *const DistlrMatrix,
    i: usize,
    out: *mut f64,
    len: usize,
) -> DistlrStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        if i >= m.inner.len() {
            return Err(invalid(format!(
                "row {i} out of range ({} traces)",
                m.inner.len()
            )));
        }
        let row = m.inner.row(i);
        if len < row.len() {
            return Err(Error::Dimension {
                expected: row.len(),
                got: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, row.len()).copy_from_slice(row);
        Ok(())
    })
}

/// LR between rows `i` and `j` of a panel already in the model's mode.
///
/// # Safety
/// Handles must be live; `out_lr` must be valid; `out_log10` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn distlr_model_lr_rows(
    model: *const DistlrModel,
    matrix: *const DistlrMatrix,
    i: usize,
    j: usize,
    out_lr: *mut f64,
    out_log10: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let md = model.as_ref().ok_or_else(|| null("model"))?;
        let mx = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        let out = out_arg(out_lr, "out_lr")?;
        let n = mx.inner.len();
        if i >= n || j >= n {
            return Err(invalid(format!("row index out of range ({n} traces)")));
        }
        if mx.inner.mode() != md.inner.input_mode {
            return Err(Error::Mode(format!(
                "panel is {}, model expects {}",
                mx.inner.mode(),
                md.inner.input_mode
            ))
            .into());
        }
        check_width(&md.inner, mx.inner.n_features())?;
        let lr = md.inner.model.compare(mx.inner.row(i), mx.inner.row(j))?;
        *out = lr.lr;
        if let Some(l) = out_log10.as_mut() {
            *l = lr.log10();
        }
        Ok(())
    })
}

/// Mann–Whitney AUC of same-source versus different-source scores.
///
/// # Safety
/// `ss` and `ds` must point to `n_ss` and `n_ds` doubles.
#[no_mangle]
pub unsafe extern "C" fn distlr_roc_auc(
    ss: *const f64,
    n_ss: usize,
    ds: *const f64,
    n_ds: usize,
    out: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let (a, b) = (slice_arg(ss, n_ss, "ss")?, slice_arg(ds, n_ds, "ds")?);
        *out_arg(out, "out")? = distlr::eval::auc(a, b)?;
        Ok(())
    })
}

/// One-sided Wilcoxon rank-sum p-value for x tending smaller than y.
///
/// # Safety
/// `x` and `y` must point to `nx` and `ny` doubles.
#[no_mangle]
pub unsafe extern "C" fn distlr_wilcoxon_p(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out: *mut f64,
) -> DistlrStatus {
    guard(|| {
        let (a, b) = (slice_arg(x, nx, "x")?, slice_arg(y, ny, "y")?);
        *out_arg(out, "out")? = distlr::select::wilcoxon_ranksum_p(a, b)?;
        Ok(())
    })
}

/// One-sided Fisher exact p-value P(X >= a) for the table [[a, b], [c, d]].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distlr_fisher_p(
    a: u64,
    b: u64,
    c: u64,
    d: u64,
    out: *mut f64,
) -> DistlrStatus {
    guard(|| {
        *out_arg(out, "out")? = distlr::select::fisher_exact_p([[a, b], [c, d]]);
        Ok(())
    })
}

//! C ABI for loading a trained alignment model, running it on similarity
//! matrices, and the soft-DTW / classic DTW / accuracy utilities.
//!
//! Every fallible function returns an [`SsStatus`]; on failure a message is
//! available from [`ss_last_error_message`] on the same thread. Matrices are
//! row-major `double` arrays. Handles are opaque and must be released with
//! their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use scoresync::model::{load_checkpoint, CaModel};
use scoresync::softdtw::{divergence_grads, dtw_classic, LocalCost, SoftDtwParams};
use scoresync::synth::{read_corpus, AlignmentPath, Corpus};
use scoresync::train::alignment_accuracy;
use scoresync::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    Dimension = 5,
    Format = 6,
    Panic = 7,
}

/// Opaque trained model.
pub struct SsModel {
    inner: CaModel,
}

/// Opaque loaded corpus.
pub struct SsCorpus {
    inner: Corpus,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> SsStatus {
    match e {
        Error::Dimension { .. } => SsStatus::Dimension,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => SsStatus::Numeric,
        Error::Io { .. } => SsStatus::Io,
        Error::Format { .. } | Error::Json(_) => SsStatus::Format,
        _ => SsStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            SsStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SsStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg("path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Matrix, Fail> {
    if rows == 0 || cols == 0 {
        return Err(Fail::Arg(format!("empty {rows}x{cols} matrix")));
    }
    Ok(Matrix::new(rows, cols, data.to_vec())?)
}

/// Message for the most recent failure on this thread (empty after success).
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint directory written by the `train` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(dir: *const c_char, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let model = load_checkpoint(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(SsModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ss_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side of the model's square input grid.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_grid_len(model: *const SsModel, out: *mut usize) -> SsStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let o = out.as_mut().ok_or(Fail::Null("out"))?;
        *o = m.inner.config().grid_len;
        Ok(())
    })
}

/// Align a `p x q` similarity matrix; writes `p` score positions to `out_path`.
///
/// # Safety
/// `similarity` must hold `p * q` values and `out_path` room for `p`.
#[no_mangle]
pub unsafe extern "C" fn ss_align(
    model: *const SsModel,
    similarity: *const f64,
    p: usize,
    q: usize,
    out_path: *mut f64,
) -> SsStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let sim = input(similarity, p.saturating_mul(q), "similarity")?;
        let out = output(out_path, p, "out_path")?;
        let (path, ..) = m.inner.predict_matrix(&matrix(sim, p, q)?)?;
        out.copy_from_slice(&path.y_indices);
        Ok(())
    })
}

/// Classic DTW over a `p x q` cost matrix: the per-frame path (length `p`)
/// and the accumulated cost.
///
/// # Safety
/// `costs` must hold `p * q` values, `out_path` room for `p`; `out_cost` may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_dtw_classic(
    costs: *const f64,
    p: usize,
    q: usize,
    out_path: *mut f64,
    out_cost: *mut f64,
) -> SsStatus {
    guard(|| {
        let c = input(costs, p.saturating_mul(q), "costs")?;
        let out = output(out_path, p, "out_path")?;
        let r = dtw_classic(&matrix(c, p, q)?)?;
        out.copy_from_slice(&r.path.y_indices);
        if let Some(cost) = out_cost.as_mut() {
            *cost = r.cost;
        }
        Ok(())
    })
}

/// Soft-DTW divergence with absolute-difference cost. `grad_a` (length
/// `na`) receives the gradient with respect to `a` when non-null.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_softdtw_divergence(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    lambda: f64,
    out_value: *mut f64,
    grad_a: *mut f64,
) -> SsStatus {
    guard(|| {
        let a = input(a, na, "a")?;
        let b = input(b, nb, "b")?;
        let value = out_value.as_mut().ok_or(Fail::Null("out_value"))?;
        let params = SoftDtwParams::new(lambda, LocalCost::AbsDiff)?;
        if grad_a.is_null() {
            *value = scoresync::softdtw::divergence(a, b, &params)?;
        } else {
            let g = output(grad_a, na, "grad_a")?;
            let d = divergence_grads(a, b, &params)?;
            g.copy_from_slice(&d.grad_a);
            *value = d.value;
        }
        Ok(())
    })
}

/// Percentage of frames within each margin (seconds); `out_percent` has
/// `n_margins` slots.
///
/// # Safety
/// `pred` and `gt` must hold `n` values, `margins` and `out_percent` `n_margins`.
#[no_mangle]
pub unsafe extern "C" fn ss_alignment_accuracy(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    frame_seconds: f64,
    margins: *const f64,
    n_margins: usize,
    out_percent: *mut f64,
) -> SsStatus {
    guard(|| {
        let pred = AlignmentPath::new(input(pred, n, "pred")?.to_vec());
        let gt = AlignmentPath::new(input(gt, n, "gt")?.to_vec());
        let margins = input(margins, n_margins, "margins")?;
        let out = output(out_percent, n_margins, "out_percent")?;
        out.copy_from_slice(&alignment_accuracy(&pred, &gt, frame_seconds, margins)?);
        Ok(())
    })
}

/// Open a corpus directory written by the `gen` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_corpus_open(dir: *const c_char, out: *mut *mut SsCorpus) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let corpus = read_corpus(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(SsCorpus { inner: corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_corpus_len(corpus: *const SsCorpus, out: *mut usize) -> SsStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Fail::Null("corpus"))?;
        *out.as_mut().ok_or(Fail::Null("out"))? = c.inner.pairs.len();
        Ok(())
    })
}

/// Dimensions `(p, q)` of pair `index`.
///
/// # Safety
/// `corpus` must be a live handle; `p` and `q` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_corpus_pair_shape(corpus: *const SsCorpus, index: usize, p: *mut usize, q: *mut usize) -> SsStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Fail::Null("corpus"))?;
        let pair = c
            .inner
            .pairs
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("pair index {index} out of {}", c.inner.pairs.len())))?;
        *p.as_mut().ok_or(Fail::Null("p"))? = pair.p();
        *q.as_mut().ok_or(Fail::Null("q"))? = pair.q();
        Ok(())
    })
}

/// Copy the similarity matrix (`p * q` values) and ground-truth path (`p`
/// values) of pair `index`. Either output may be null.
///
/// # Safety
/// Non-null outputs must have the room stated above.
#[no_mangle]
pub unsafe extern "C" fn ss_corpus_pair_data(
    corpus: *const SsCorpus,
    index: usize,
    similarity: *mut f64,
    gt_path: *mut f64,
) -> SsStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Fail::Null("corpus"))?;
        let pair = c
            .inner
            .pairs
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("pair index {index} out of {}", c.inner.pairs.len())))?;
        if !similarity.is_null() {
            output(similarity, pair.p() * pair.q(), "similarity")?.copy_from_slice(pair.similarity.data());
        }
        if !gt_path.is_null() {
            output(gt_path, pair.p(), "gt_path")?.copy_from_slice(&pair.gt_path.y_indices);
        }
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`ss_corpus_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_corpus_free(corpus: *mut SsCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

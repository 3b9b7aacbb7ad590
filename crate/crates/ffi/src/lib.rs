//! C ABI over the agreekit core.
//!
//! Logs and label sets cross the boundary as opaque handles created by
//! `ak_*_new`/`ak_log_read` and released with the matching `ak_*_free`.
//! Every fallible call returns an [`AkStatus`]; on failure a message for the
//! calling thread is available from [`ak_last_error_message`]. Output buffers
//! are caller-allocated with sizes given in the function docs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use agreekit::aggregate::{agr_margin, epoch_vote, map_predict, subsample_epochs};
use agreekit::io::{read_log, write_log};
use agreekit::metrics::accuracy;
use agreekit::{Checkpoint, EpochSubset, Error, LabelSet, PredictionLog};

/// Result of every fallible call. Values 2 to 4 match the command-line exit
/// codes for the same failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AkStatus {
    Ok = 0,
    /// A required pointer was null or a length was inconsistent.
    InvalidArgument = 1,
    Input = 2,
    Capability = 3,
    Divergence = 4,
    /// A log file failed to decode (bad magic, version, CRC or dimensions).
    Format = 5,
    Io = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

/// Opaque prediction log.
pub struct AkLog {
    inner: PredictionLog,
}

/// Opaque label set.
pub struct AkLabels {
    inner: LabelSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> AkStatus {
    match err {
        Error::Input(_) => AkStatus::Input,
        Error::Capability(_) => AkStatus::Capability,
        Error::Divergence { .. } => AkStatus::Divergence,
        Error::Format(_) => AkStatus::Format,
        Error::Io(_) => AkStatus::Io,
    }
}

enum Failure {
    Arg(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure> + UnwindSafe>(f: F) -> AkStatus {
    match catch_unwind(f) {
        Ok(Ok(())) => {
            set_error("");
            AkStatus::Ok
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            AkStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            AkStatus::Internal
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Arg("null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure::Arg("path is not valid UTF-8"))
}

unsafe fn log_ref<'a>(p: *const AkLog) -> Result<&'a PredictionLog, Failure> {
    p.as_ref().map(|l| &l.inner).ok_or(Failure::Arg("null log handle"))
}

unsafe fn labels_ref<'a>(p: *const AkLabels) -> Result<&'a LabelSet, Failure> {
    p.as_ref().map(|l| &l.inner).ok_or(Failure::Arg("null labels handle"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ak_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes (without terminator) of the calling thread's last error.
#[no_mangle]
pub extern "C" fn ak_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copy the last error, truncated and NUL-terminated, into `buf` of
/// `capacity` bytes. Returns the untruncated length.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ak_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = e.len().min(capacity - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Build a log from flat arrays. `hard` holds `n*k*t` class indices in
/// `[network][checkpoint][example]` order; `soft` is null or holds
/// `n*k*t*c` probabilities in the same order with classes innermost.
/// Checkpoint `e` is `ckpt_num[e] / ckpt_den[e]` epochs.
///
/// # Safety
/// Every non-null pointer must reference the stated number of elements and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ak_log_new(
    n: usize,
    k: usize,
    t: usize,
    c: usize,
    ckpt_num: *const u32,
    ckpt_den: *const u32,
    hard: *const u32,
    soft: *const f32,
    out: *mut *mut AkLog,
) -> AkStatus {
    guard(move || {
        if out.is_null() {
            return Err(Failure::Arg("null output pointer"));
        }
        *out = ptr::null_mut();
        let cells = n
            .checked_mul(k)
            .and_then(|v| v.checked_mul(t))
            .ok_or(Failure::Arg("dimensions overflow"))?;
        let nums = slice_in(ckpt_num, k, "null checkpoint numerators")?;
        let dens = slice_in(ckpt_den, k, "null checkpoint denominators")?;
        let checkpoints = nums
            .iter()
            .zip(dens)
            .map(|(&a, &b)| Checkpoint::new(a, b))
            .collect::<agreekit::Result<Vec<_>>>()?;
        let hard = slice_in(hard, cells, "null hard predictions")?.to_vec();
        let soft = if soft.is_null() {
            None
        } else {
            let len = cells.checked_mul(c).ok_or(Failure::Arg("dimensions overflow"))?;
            Some(slice_in(soft, len, "null probabilities")?.to_vec())
        };
        let log = PredictionLog::new(n, checkpoints, t, c, hard, soft)?;
        *out = Box::into_raw(Box::new(AkLog { inner: log }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ak_log_read(path: *const c_char, out: *mut *mut AkLog) -> AkStatus {
    guard(move || {
        if out.is_null() {
            return Err(Failure::Arg("null output pointer"));
        }
        *out = ptr::null_mut();
        let log = read_log(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AkLog { inner: log }));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ak_log_write(log: *const AkLog, path: *const c_char) -> AkStatus {
    guard(move || {
        write_log(path_arg(path)?, log_ref(log)?)?;
        Ok(())
    })
}

/// Release a log handle. Null is ignored.
///
/// # Safety
/// `log` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ak_log_free(log: *mut AkLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Dimensions of a log; any output pointer may be null.
///
/// # Safety
/// `log` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ak_log_dims(
    log: *const AkLog,
    n: *mut usize,
    k: *mut usize,
    t: *mut usize,
    c: *mut usize,
) -> AkStatus {
    guard(move || {
        let l = log_ref(log)?;
        for (p, v) in [
            (n, l.num_networks()),
            (k, l.num_checkpoints()),
            (t, l.num_examples()),
            (c, l.num_classes()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `labels` must reference `len` elements (or be null with `len == 0`) and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ak_labels_new(
    labels: *const u32,
    len: usize,
    num_classes: usize,
    out: *mut *mut AkLabels,
) -> AkStatus {
    guard(move || {
        if out.is_null() {
            return Err(Failure::Arg("null output pointer"));
        }
        *out = ptr::null_mut();
        let set = LabelSet::new(slice_in(labels, len, "null labels")?.to_vec(), num_classes)?;
        *out = Box::into_raw(Box::new(AkLabels { inner: set }));
        Ok(())
    })
}

/// Release a label handle. Null is ignored.
///
/// # Safety
/// `labels` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ak_labels_free(labels: *mut AkLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// Majority vote at checkpoint position `checkpoint`; writes `t` classes.
///
/// # Safety
/// `log` must be a live handle and `out` hold `t` writable elements.
#[no_mangle]
pub unsafe extern "C" fn ak_epoch_vote(log: *const AkLog, checkpoint: usize, out: *mut u32) -> AkStatus {
    guard(move || {
        let l = log_ref(log)?;
        let votes = epoch_vote(l, checkpoint)?;
        slice_out(out, votes.len(), "null output buffer")?.copy_from_slice(&votes);
        Ok(())
    })
}

/// Max-agreement prediction over the checkpoint positions in `epochs`
/// (strictly increasing), or over every checkpoint when `epochs_len` is 0.
/// Writes `t` classes.
///
/// # Safety
/// `log` must be a live handle, `epochs` reference `epochs_len` elements and
/// `out` hold `t` writable elements.
#[no_mangle]
pub unsafe extern "C" fn ak_map_predict(
    log: *const AkLog,
    epochs: *const usize,
    epochs_len: usize,
    out: *mut u32,
) -> AkStatus {
    guard(move || {
        let l = log_ref(log)?;
        let subset = if epochs_len == 0 {
            EpochSubset::all(l.num_checkpoints())?
        } else {
            EpochSubset::new(slice_in(epochs, epochs_len, "null epoch list")?.to_vec(), l.num_checkpoints())?
        };
        let preds = map_predict(l, &subset)?;
        slice_out(out, preds.len(), "null output buffer")?.copy_from_slice(&preds);
        Ok(())
    })
}

/// Agreement margin over every checkpoint of the final-checkpoint vote;
/// writes `t` margins and, when `correct` is non-null, `t` flags (1 when
/// the final vote matches the label).
///
/// # Safety
/// Handles must be live; `margins` (and non-null `correct`) must hold `t`
/// writable elements.
#[no_mangle]
pub unsafe extern "C" fn ak_agr_margin(
    log: *const AkLog,
    labels: *const AkLabels,
    margins: *mut f64,
    correct: *mut u8,
) -> AkStatus {
    guard(move || {
        let l = log_ref(log)?;
        let y = labels_ref(labels)?;
        let report = agr_margin(l, &EpochSubset::all(l.num_checkpoints())?, y)?;
        slice_out(margins, report.margins.len(), "null output buffer")?.copy_from_slice(&report.margins);
        if !correct.is_null() {
            let flags = slice_out(correct, report.correct_mask.len(), "null flag buffer")?;
            for (f, &ok) in flags.iter_mut().zip(&report.correct_mask) {
                *f = u8::from(ok);
            }
        }
        Ok(())
    })
}

/// Fraction of `preds` equal to the labels.
///
/// # Safety
/// `preds` must reference `len` elements, `labels` be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ak_accuracy(
    preds: *const u32,
    len: usize,
    labels: *const AkLabels,
    out: *mut f64,
) -> AkStatus {
    guard(move || {
        if out.is_null() {
            return Err(Failure::Arg("null output pointer"));
        }
        *out = accuracy(slice_in(preds, len, "null predictions")?, labels_ref(labels)?)?;
        Ok(())
    })
}

/// `k` evenly spaced checkpoint positions out of `total`, ending at the last.
///
/// # Safety
/// `out` must hold `k` writable elements.
#[no_mangle]
pub unsafe extern "C" fn ak_subsample_epochs(total: usize, k: usize, out: *mut usize) -> AkStatus {
    guard(move || {
        let subset = subsample_epochs(total, k)?;
        slice_out(out, k, "null output buffer")?.copy_from_slice(subset.indices());
        Ok(())
    })
}

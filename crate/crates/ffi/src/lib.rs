// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! C ABI over the copal engine.
//!
//! Every fallible call returns a [`CopalStatus`]. On failure the message is
//! kept per thread and can be read with [`copal_last_error_message`]. Handles
//! are opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use copal::corpus::{load_corpus_with_split, sample_calibration, Corpus};
use copal::importance::save_state;
use copal::metrics::perplexity;
use copal::model::{load_checkpoint, save_checkpoint, Network};
use copal::pruner::{linear_sparsity, save_masks, ContinualPruner, Criterion, PruneConfig, Sparsity};
use copal::seeds::derive_seed;
use copal::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    Format = 5,
    Io = 6,
    State = 7,
    Panic = 99,
}

/// A loaded network.
pub struct CopalNetwork {
    inner: Network,
}

/// A tokenised corpus with its calibration / evaluation split.
pub struct CopalCorpus {
    inner: Corpus,
}

/// A continual pruning session over a fixed base network.
pub struct CopalPruner {
    inner: ContinualPruner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CopalStatus {
    match e {
        Error::Shape(_) => CopalStatus::Shape,
        Error::Numerical(_) | Error::Training { .. } => CopalStatus::Numerical,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => CopalStatus::Format,
        Error::Io(_) => CopalStatus::Io,
        Error::Input(_) | Error::Usage(_) | Error::Config(_) => CopalStatus::InvalidArgument,
        Error::Completeness(_) => CopalStatus::State,
    }
}

struct Fail(CopalStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CopalStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CopalStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CopalStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CopalStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CopalStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(CopalStatus::NullPointer, format!("{what} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(CopalStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(CopalStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next copal call on the same thread.
#[no_mangle]
pub extern "C" fn copal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn copal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn copal_network_load(path: *const c_char, out: *mut *mut CopalNetwork) -> CopalStatus {
    guard(|| {
        let net = load_checkpoint(path_arg(path, "path")?)?;
        put(out, CopalNetwork { inner: net })
    })
}

/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn copal_network_save(net: *const CopalNetwork, path: *const c_char) -> CopalStatus {
    guard(|| Ok(save_checkpoint(&ref_arg(net, "network")?.inner, path_arg(path, "path")?)?))
}

/// # Safety
/// `net` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn copal_network_free(net: *mut CopalNetwork) {
    free(net)
}

/// Fraction of zero weights over all prunable layers.
///
/// # Safety
/// `net` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn copal_network_sparsity(net: *const CopalNetwork, out: *mut f64) -> CopalStatus {
    guard(|| {
        let v = linear_sparsity(&ref_arg(net, "network")?.inner);
        *mut_arg(out, "out")? = v;
        Ok(())
    })
}

/// Perplexity on the corpus's evaluation split in windows of `seq_len`.
///
/// # Safety
/// Handles must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn copal_network_perplexity(
    net: *const CopalNetwork,
    corpus: *const CopalCorpus,
    seq_len: usize,
    out: *mut f64,
) -> CopalStatus {
    guard(|| {
        let v = perplexity(&ref_arg(net, "network")?.inner, &ref_arg(corpus, "corpus")?.inner, seq_len)?;
        *mut_arg(out, "out")? = v;
        Ok(())
    })
}

/// Loads a byte corpus from a file. `eval_fraction` is the held-out suffix.
///
/// # Safety
/// `path` and `name` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn copal_corpus_load(
    path: *const c_char,
    name: *const c_char,
    eval_fraction: f64,
    out: *mut *mut CopalCorpus,
) -> CopalStatus {
    guard(|| {
        let c = load_corpus_with_split(path_arg(path, "path")?, str_arg(name, "name")?, eval_fraction)?;
        put(out, CopalCorpus { inner: c })
    })
}

/// Builds a corpus from `len` bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn copal_corpus_from_bytes(
    name: *const c_char,
    data: *const u8,
    len: usize,
    eval_fraction: f64,
    out: *mut *mut CopalCorpus,
) -> CopalStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        if data.is_null() && len > 0 {
            return Err(Fail(CopalStatus::NullPointer, "data is null".into()));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let c = Corpus::from_tokens(name, bytes.iter().map(|&b| u16::from(b)).collect(), eval_fraction)?;
        put(out, CopalCorpus { inner: c })
    })
}

/// # Safety
/// `corpus` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn copal_corpus_free(corpus: *mut CopalCorpus) {
    free(corpus)
}

/// Starts a session. `criterion` is `copal`, `magnitude` or `wanda_style`;
/// `sparsity` is a ratio such as `0.5` or a pattern such as `2:4`.
///
/// # Safety
/// `base` must come from this library; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_new(
    base: *const CopalNetwork,
    criterion: *const c_char,
    sparsity: *const c_char,
    seed: u64,
    out: *mut *mut CopalPruner,
) -> CopalStatus {
    guard(|| {
        let net = ref_arg(base, "network")?.inner.clone();
        let criterion = Criterion::parse(str_arg(criterion, "criterion")?)?;
        let sparsity = Sparsity::parse(str_arg(sparsity, "sparsity")?)?;
        let p = ContinualPruner::new(net, PruneConfig::new(criterion, sparsity).with_seed(seed))?;
        put(out, CopalPruner { inner: p })
    })
}

/// Samples `n_samples` calibration windows of `seq_len` tokens from the
/// corpus and runs one prune step. `stasis` receives 1 when no mask bit
/// changed versus the previous step, 0 otherwise, -1 on the first step; it
/// may be null.
///
/// # Safety
/// Handles must come from this library; `stasis` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_step(
    pruner: *mut CopalPruner,
    corpus: *const CopalCorpus,
    n_samples: usize,
    seq_len: usize,
    stasis: *mut i32,
) -> CopalStatus {
    guard(|| {
        let p = mut_arg(pruner, "pruner")?;
        let c = &ref_arg(corpus, "corpus")?.inner;
        let seed = derive_seed(p.inner.config().seed, &["calibration", c.name()]);
        let calib = sample_calibration(c, n_samples, seq_len, seed)?;
        let summary = p.inner.step(&calib)?;
        if let Some(s) = stasis.as_mut() {
            *s = summary.stasis.map_or(-1, i32::from);
        }
        Ok(())
    })
}

/// Copies the current pruned network into a new handle.
///
/// # Safety
/// `pruner` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_network(pruner: *const CopalPruner, out: *mut *mut CopalNetwork) -> CopalStatus {
    guard(|| {
        let net = ref_arg(pruner, "pruner")?.inner.network().clone();
        put(out, CopalNetwork { inner: net })
    })
}

/// Writes the current masks in the packed mask format.
///
/// # Safety
/// `pruner` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_export_masks(pruner: *const CopalPruner, path: *const c_char) -> CopalStatus {
    guard(|| {
        let p = ref_arg(pruner, "pruner")?;
        let masks = p.inner.masks().ok_or_else(|| Fail(CopalStatus::State, "no prune step has run yet".into()))?;
        Ok(save_masks(masks, path_arg(path, "path")?)?)
    })
}

/// Writes the accumulated importance state.
///
/// # Safety
/// `pruner` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_save_state(pruner: *const CopalPruner, path: *const c_char) -> CopalStatus {
    guard(|| Ok(save_state(ref_arg(pruner, "pruner")?.inner.state(), path_arg(path, "path")?)?))
}

/// # Safety
/// `pruner` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn copal_pruner_free(pruner: *mut CopalPruner) {
    free(pruner)
}

//! C ABI for pairforge.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Fallible calls return a
//! [`PfStatus`]; the message of the most recent failure on the calling
//! thread is available from [`pf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pairforge::contrastive::{contrastive_loss, loss_gradient, Label};
use pairforge::corpus::{read_embedding_corpus, Corpus};
use pairforge::knn::{KnnIndex, NeighborSearch};
use pairforge::mining::{mine_anchor, MinedPairs, MiningConfig};
use pairforge::rag::keyword_overlap;
use pairforge::stats::{DistanceDistribution, ThresholdPair};
use pairforge::Error;

/// Result code of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidData = 4,
    Io = 5,
    Network = 6,
    Divergence = 7,
    Panic = 8,
}

impl From<&Error> for PfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => PfStatus::Io,
            Error::Record { .. } | Error::InvalidData(_) => PfStatus::InvalidData,
            Error::DimensionMismatch { .. } => PfStatus::DimensionMismatch,
            Error::InvalidArgument(_) => PfStatus::InvalidArgument,
            Error::Divergence { .. } => PfStatus::Divergence,
            Error::Auth { .. }
            | Error::RateLimited { .. }
            | Error::Network { .. }
            | Error::MalformedResponse(_) => PfStatus::Network,
        }
    }
}

/// Embedding corpus loaded from a JSON-lines file.
pub struct PfCorpus(Corpus);

/// Exact nearest-neighbor index over a fixed point set.
pub struct PfIndex(KnnIndex);

/// Positive and negative ordinals mined for one anchor.
pub struct PfMined(MinedPairs);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), PfError>) -> PfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(PfError(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

struct PfError(PfStatus, String);

impl From<Error> for PfError {
    fn from(e: Error) -> Self {
        PfError(PfStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> PfError {
    PfError(PfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> PfError {
    PfError(PfStatus::InvalidArgument, message.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PfError> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PfError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Loads an embedding corpus. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_load(path: *const c_char, out: *mut *mut PfCorpus) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let corpus = read_embedding_corpus(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PfCorpus(corpus)));
        Ok(())
    })
}

/// Number of records; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_len(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Vector dimension; 0 for NULL or an empty corpus.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_dim(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().and_then(|c| c.0.dim()).unwrap_or(0)
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_free(corpus: *mut PfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Builds an index over `n` row-major points of dimension `dim`.
///
/// # Safety
/// `points` must hold `n * dim` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_index_build(
    points: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut PfIndex,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err(invalid("dim must be >= 1"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("n * dim overflows"))?;
        let data = slice_arg(points, len, "points")?;
        let index = KnnIndex::build(data.chunks_exact(dim))?;
        *out = Box::into_raw(Box::new(PfIndex(index)));
        Ok(())
    })
}

/// Builds an index over the vectors of a corpus, in record order.
///
/// # Safety
/// `corpus` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_index_from_corpus(
    corpus: *const PfCorpus,
    out: *mut *mut PfIndex,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let index = KnnIndex::from_corpus(&corpus.0)?;
        *out = Box::into_raw(Box::new(PfIndex(index)));
        Ok(())
    })
}

/// Number of indexed points; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_index_len(index: *const PfIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Writes the `k` nearest points to `query`, closest first, ties broken by
/// ordinal.
///
/// # Safety
/// `query` must hold `dim` doubles; `out_ordinals` and `out_distances` must
/// each have room for `k` elements.
#[no_mangle]
pub unsafe extern "C" fn pf_index_query_knn(
    index: *const PfIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    out_ordinals: *mut usize,
    out_distances: *mut f64,
) -> PfStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let query = slice_arg(query, dim, "query")?;
        if k > 0 && (out_ordinals.is_null() || out_distances.is_null()) {
            return Err(null("output buffer"));
        }
        let neighbors = index.0.query_knn(query, k)?;
        for (i, n) in neighbors.iter().enumerate() {
            *out_ordinals.add(i) = n.ordinal;
            *out_distances.add(i) = n.distance;
        }
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_index_free(index: *mut PfIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Mines one anchor with fixed distance thresholds. Positives satisfy
/// `distance <= lower_bound`, negatives `distance > upper_bound`; each list
/// holds at most `max_size` ordinals and the anchor never pairs with itself.
///
/// # Safety
/// `index` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_mine_anchor(
    index: *const PfIndex,
    anchor: usize,
    lower_bound: f64,
    upper_bound: f64,
    max_size: usize,
    seed: u64,
    out: *mut *mut PfMined,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let thresholds = ThresholdPair {
            lower_bound,
            upper_bound,
            lower_pct: f64::NAN,
            upper_pct: f64::NAN,
        };
        let config = MiningConfig {
            max_size,
            ..MiningConfig::new(thresholds, seed)
        };
        let mined = mine_anchor(&index.0, anchor, &config)?;
        *out = Box::into_raw(Box::new(PfMined(mined)));
        Ok(())
    })
}

/// Positive ordinals of a mining result; `*len` receives the count.
///
/// # Safety
/// `mined` must be a live handle and `len` a valid pointer. The returned
/// array lives as long as `mined`.
#[no_mangle]
pub unsafe extern "C" fn pf_mined_positives(
    mined: *const PfMined,
    len: *mut usize,
) -> *const usize {
    list(mined, len, |m| &m.positive_ordinals)
}

/// Negative ordinals of a mining result; `*len` receives the count.
///
/// # Safety
/// Same as [`pf_mined_positives`].
#[no_mangle]
pub unsafe extern "C" fn pf_mined_negatives(
    mined: *const PfMined,
    len: *mut usize,
) -> *const usize {
    list(mined, len, |m| &m.negative_ordinals)
}

unsafe fn list(
    mined: *const PfMined,
    len: *mut usize,
    pick: impl Fn(&MinedPairs) -> &Vec<usize>,
) -> *const usize {
    let Some(m) = mined.as_ref() else {
        if !len.is_null() {
            *len = 0;
        }
        return ptr::null();
    };
    let v = pick(&m.0);
    if !len.is_null() {
        *len = v.len();
    }
    v.as_ptr()
}

/// # Safety
/// `mined` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_mined_free(mined: *mut PfMined) {
    if !mined.is_null() {
        drop(Box::from_raw(mined));
    }
}

/// Linearly interpolated percentile `p` in [0, 100] of `n` samples.
///
/// # Safety
/// `samples` must hold `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_percentile(
    samples: *const f64,
    n: usize,
    p: f64,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dist = DistanceDistribution::new(slice_arg(samples, n, "samples")?.to_vec())?;
        *out = dist.percentile(p)?;
        Ok(())
    })
}

/// Adjusted Fisher–Pearson skewness of `n >= 3` samples.
///
/// # Safety
/// `samples` must hold `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_skewness(samples: *const f64, n: usize, out: *mut f64) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dist = DistanceDistribution::new(slice_arg(samples, n, "samples")?.to_vec())?;
        *out = dist.skewness()?;
        Ok(())
    })
}

/// Contrastive loss of a score `d`. Nonzero `label` marks a positive pair.
#[no_mangle]
pub extern "C" fn pf_contrastive_loss(label: c_int, d: f64, alpha: f64) -> f64 {
    contrastive_loss(Label::from(label != 0), d, alpha)
}

/// Derivative of [`pf_contrastive_loss`] with respect to `d`.
#[no_mangle]
pub extern "C" fn pf_loss_gradient(label: c_int, d: f64, alpha: f64) -> f64 {
    loss_gradient(Label::from(label != 0), d, alpha)
}

/// Fraction of the answer's distinct tokens found in the context.
///
/// # Safety
/// `answer` and `context` must be NUL-terminated UTF-8 strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_keyword_overlap(
    answer: *const c_char,
    context: *const c_char,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = keyword_overlap(str_arg(answer, "answer")?, str_arg(context, "context")?);
        Ok(())
    })
}

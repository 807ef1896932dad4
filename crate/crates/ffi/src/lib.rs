//! C ABI over `delivery_fusion`.
//!
//! Every fallible function returns a `FusionStatus` and writes its result
//! through an out-pointer. On failure, `fusion_last_error_message` returns a
//! description of the most recent error on the calling thread.
//!
//! Datasets and imputation results are opaque handles owned by the caller and
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use delivery_fusion::evaluation::sorted_mse;
use delivery_fusion::matching::{impute, ImputationResult, ImputeOptions, MatchOptions, TieBreak};
use delivery_fusion::{BitVector, EncodedDataset, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Reading a file failed.
    Io = 3,
    /// Two datasets were encoded with different feature dictionaries.
    DictionaryMismatch = 4,
    /// Malformed input file or configuration.
    Format = 5,
    /// Inputs are well-formed but violate a precondition.
    Data = 6,
    /// An index was past the end.
    OutOfRange = 7,
    /// The library panicked; this is a bug.
    Panic = 8,
}

impl From<&Error> for FusionStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => FusionStatus::Io,
            Error::DictionaryMismatch { .. } => FusionStatus::DictionaryMismatch,
            Error::Schema(_)
            | Error::Mapping { .. }
            | Error::Ingest { .. }
            | Error::Format { .. }
            | Error::Json(_)
            | Error::Csv(_) => FusionStatus::Format,
            _ => FusionStatus::Data,
        }
    }
}

/// Opaque encoded dataset.
pub struct FusionDataset(EncodedDataset);

/// Opaque imputation result.
pub struct FusionImputation(ImputationResult);

/// Options for `fusion_impute`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FusionImputeOptions {
    /// Replace observed targets too, not only missing ones.
    pub impute_all: bool,
    /// Break distance ties with a seeded random choice instead of the lowest
    /// bucket index.
    pub random_tie_break: bool,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn fail(status: FusionStatus, message: impl Into<String>) -> FusionStatus {
    set_error(message.into());
    status
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), FusionStatus>) -> FusionStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FusionStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(FusionStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> FusionStatus {
    fail(FusionStatus::from(&e), e.to_string())
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, FusionStatus> {
    p.as_ref().ok_or_else(|| fail(FusionStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FusionStatus> {
    p.as_mut().ok_or_else(|| fail(FusionStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], FusionStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FusionStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn bits(p: *const u8, len: usize, what: &str) -> Result<BitVector, FusionStatus> {
    let raw = slice(p, len, what)?;
    let bools: Vec<bool> = raw.iter().map(|&b| b != 0).collect();
    Ok(BitVector::from_bools(&bools))
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn fusion_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fusion_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an encoded dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_dataset_load(path: *const c_char, out_dataset: *mut *mut FusionDataset) -> FusionStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        *slot = ptr::null_mut();
        if path.is_null() {
            return Err(fail(FusionStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(FusionStatus::InvalidUtf8, "path is not valid UTF-8"))?;
        let ds = EncodedDataset::load(Path::new(path)).map_err(lib_err)?;
        *slot = Box::into_raw(Box::new(FusionDataset(ds)));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from `fusion_dataset_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fusion_dataset_free(dataset: *mut FusionDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples.
///
/// # Safety
/// `dataset` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_dataset_len(dataset: *const FusionDataset, out_len: *mut usize) -> FusionStatus {
    guard(|| {
        *out(out_len, "out_len")? = non_null(dataset, "dataset")?.0.len();
        Ok(())
    })
}

/// Width of the encoded feature vectors.
///
/// # Safety
/// `dataset` must be a live handle; `out_dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_dataset_dimension(dataset: *const FusionDataset, out_dim: *mut usize) -> FusionStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = non_null(dataset, "dataset")?.0.dimension();
        Ok(())
    })
}

/// Number of samples whose target is missing.
///
/// # Safety
/// `dataset` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_dataset_missing_count(
    dataset: *const FusionDataset,
    out_count: *mut usize,
) -> FusionStatus {
    guard(|| {
        *out(out_count, "out_count")? = non_null(dataset, "dataset")?.0.missing_count();
        Ok(())
    })
}

/// Imputes `source` targets from nearest-neighbor buckets of `candidate`.
/// `options` may be null for the defaults.
///
/// # Safety
/// Both datasets must be live handles; `options` null or valid;
/// `out_imputation` writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_impute(
    source: *const FusionDataset,
    candidate: *const FusionDataset,
    options: *const FusionImputeOptions,
    out_imputation: *mut *mut FusionImputation,
) -> FusionStatus {
    guard(|| {
        let slot = out(out_imputation, "out_imputation")?;
        *slot = ptr::null_mut();
        let source = non_null(source, "source")?;
        let candidate = non_null(candidate, "candidate")?;
        let o = options.as_ref().copied().unwrap_or_default();
        let opts = ImputeOptions {
            impute_all: o.impute_all,
            matching: MatchOptions {
                tie_break: if o.random_tie_break {
                    TieBreak::Random { seed: o.seed }
                } else {
                    TieBreak::Index
                },
                ..MatchOptions::default()
            },
            ..ImputeOptions::default()
        };
        let res = impute(&source.0, &candidate.0, opts).map_err(lib_err)?;
        *slot = Box::into_raw(Box::new(FusionImputation(res)));
        Ok(())
    })
}

/// Releases an imputation result. Null is ignored.
///
/// # Safety
/// `imputation` must come from `fusion_impute` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_free(imputation: *mut FusionImputation) {
    if !imputation.is_null() {
        drop(Box::from_raw(imputation));
    }
}

/// Scaling weight `|source| / |candidate|` applied to bucket means.
///
/// # Safety
/// `imputation` must be a live handle; `out_weight` writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_weight(
    imputation: *const FusionImputation,
    out_weight: *mut f64,
) -> FusionStatus {
    guard(|| {
        *out(out_weight, "out_weight")? = non_null(imputation, "imputation")?.0.weight;
        Ok(())
    })
}

/// Number of per-sample values (equal to the source length).
///
/// # Safety
/// `imputation` must be a live handle; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_sample_count(
    imputation: *const FusionImputation,
    out_len: *mut usize,
) -> FusionStatus {
    guard(|| {
        *out(out_len, "out_len")? = non_null(imputation, "imputation")?.0.per_sample_y.len();
        Ok(())
    })
}

/// Target of source sample `index`, imputed or observed.
///
/// # Safety
/// `imputation` must be a live handle; `out_y` writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_sample_y(
    imputation: *const FusionImputation,
    index: usize,
    out_y: *mut f64,
) -> FusionStatus {
    guard(|| {
        let slot = out(out_y, "out_y")?;
        let ys = &non_null(imputation, "imputation")?.0.per_sample_y;
        *slot = *ys
            .get(index)
            .ok_or_else(|| fail(FusionStatus::OutOfRange, format!("sample {index} of {}", ys.len())))?;
        Ok(())
    })
}

/// Number of households in the result.
///
/// # Safety
/// `imputation` must be a live handle; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_household_count(
    imputation: *const FusionImputation,
    out_len: *mut usize,
) -> FusionStatus {
    guard(|| {
        *out(out_len, "out_len")? = non_null(imputation, "imputation")?.0.per_household_y.len();
        Ok(())
    })
}

/// Copies household totals, in first-appearance order, into `buffer`.
/// `capacity` must be at least the household count.
///
/// # Safety
/// `imputation` must be a live handle; `buffer` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fusion_imputation_household_totals(
    imputation: *const FusionImputation,
    buffer: *mut f64,
    capacity: usize,
) -> FusionStatus {
    guard(|| {
        let totals = &non_null(imputation, "imputation")?.0.per_household_y;
        if capacity < totals.len() {
            return Err(fail(
                FusionStatus::OutOfRange,
                format!("buffer holds {capacity}, need {}", totals.len()),
            ));
        }
        if !totals.is_empty() && buffer.is_null() {
            return Err(fail(FusionStatus::NullPointer, "buffer is null"));
        }
        for (i, y) in totals.values().enumerate() {
            *buffer.add(i) = *y;
        }
        Ok(())
    })
}

/// Normalized Hamming distance between two bit arrays of `len` bytes, each
/// byte read as 0 or non-zero.
///
/// # Safety
/// `a` and `b` must each point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn fusion_hamming(a: *const u8, b: *const u8, len: usize, out_distance: *mut f64) -> FusionStatus {
    guard(|| {
        let slot = out(out_distance, "out_distance")?;
        let (a, b) = (bits(a, len, "a")?, bits(b, len, "b")?);
        *slot = delivery_fusion::hamming(&a, &b).map_err(lib_err)?;
        Ok(())
    })
}

/// Mean squared error between the ascending sorts of two equal-length arrays.
///
/// # Safety
/// `a` and `b` must each point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn fusion_sorted_mse(a: *const f64, b: *const f64, len: usize, out_mse: *mut f64) -> FusionStatus {
    guard(|| {
        let slot = out(out_mse, "out_mse")?;
        let (a, b) = (slice(a, len, "a")?, slice(b, len, "b")?);
        *slot = sorted_mse(a, b).map_err(lib_err)?;
        Ok(())
    })
}

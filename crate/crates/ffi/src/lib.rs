//! C ABI over the `infosel` library.
//!
//! Objects cross the boundary as opaque handles created by `*_load`,
//! `*_new` or a computation, and released with the matching `*_free`.
//! Every fallible call returns an [`InfoselStatus`]; on failure the
//! thread-local [`infosel_last_error_code`] and
//! [`infosel_last_error_message`] describe what went wrong. Output
//! pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use infosel::iei::{self, ScoreTable};
use infosel::probe::{self, ProbeConfig, ProbeKind};
use infosel::selection::{self, BudgetKind, BudgetScheme, Direction, SelectionPlan};
use infosel::{ood, EmbeddingTable, Error, ErrorKind, MigrationSplit};

/// Status codes. The non-zero values match the CLI's exit codes where the
/// categories overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoselStatus {
    Ok = 0,
    /// Bad input data or arguments.
    Validation = 2,
    /// File could not be read or written.
    Io = 3,
    /// Computation failed.
    Runtime = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoselIndicator {
    DistanceEntropy = 0,
    ProbabilityEntropy = 1,
    Metric = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoselScheme {
    Balanced = 0,
    Unbalanced = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoselDirection {
    Goodset = 0,
    Badset = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoselProbeKind {
    Linear = 0,
    NearestPrototype = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoselProbeConfig {
    pub kind: InfoselProbeKind,
    pub step_size: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

/// An embedding table.
pub struct InfoselTable(EmbeddingTable);

/// Per-sample indicator scores.
pub struct InfoselScores(ScoreTable);

/// A budgeted selection.
pub struct InfoselPlan(SelectionPlan);

/// A positive/negative migration split.
pub struct InfoselSplit(MigrationSplit);

struct LastError {
    code: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(code: &str, message: String) {
    let clean = |s: String| CString::new(s.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            code: clean(code.to_string()),
            message: clean(message),
        })
    });
}

fn status_of(e: &Error) -> InfoselStatus {
    match e.kind() {
        ErrorKind::Validation => InfoselStatus::Validation,
        ErrorKind::Io => InfoselStatus::Io,
        ErrorKind::Runtime => InfoselStatus::Runtime,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and last-error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InfoselStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InfoselStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.code(), e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error("NULL_POINTER", format!("{what} must not be null"));
            InfoselStatus::NullPointer
        }
        Err(_) => {
            set_error("PANIC", "internal panic".into());
            InfoselStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies `src` into `dst` (capacity `cap`) and returns `src.len()`, so a
/// call with `cap == 0` queries the required size.
unsafe fn copy_ids(src: &[u64], dst: *mut u64, cap: usize) -> usize {
    if !dst.is_null() {
        let n = src.len().min(cap);
        ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
    }
    src.len()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn infosel_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Stable error code (for example `MISSING_LOGITS`) of the last failed call
/// on this thread, or null if it succeeded. Valid until the next call.
#[no_mangle]
pub extern "C" fn infosel_last_error_code() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.code.as_ptr()))
}

/// Human-readable message of the last failed call on this thread, or null.
/// Valid until the next call.
#[no_mangle]
pub extern "C" fn infosel_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Default probe settings.
#[no_mangle]
pub extern "C" fn infosel_probe_config_default() -> InfoselProbeConfig {
    let d = ProbeConfig::default();
    InfoselProbeConfig {
        kind: InfoselProbeKind::Linear,
        step_size: d.step_size,
        epochs: d.epochs,
        l2: d.l2,
        seed: d.seed,
    }
}

/// Reads an EMB1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_load(path: *const c_char, out: *mut *mut InfoselTable) -> InfoselStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, InfoselTable(EmbeddingTable::load(&path)?))
    })
}

/// Builds a table from row-major arrays. `logits` may be null; otherwise it
/// holds `n * n_classes` values. Rows are reordered by id.
///
/// # Safety
/// Each non-null array must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_new(
    n: usize,
    dim: usize,
    n_classes: usize,
    ids: *const u64,
    labels: *const u32,
    features: *const f32,
    logits: *const f32,
    out: *mut *mut InfoselTable,
) -> InfoselStatus {
    guard(|| {
        let ids = slice_arg(ids, n, "ids")?.to_vec();
        let labels = slice_arg(labels, n, "labels")?.to_vec();
        let features = slice_arg(features, n * dim, "features")?.to_vec();
        let logits = if logits.is_null() {
            None
        } else {
            Some(slice_arg(logits, n * n_classes, "logits")?.to_vec())
        };
        put(out, InfoselTable(EmbeddingTable::new(dim, n_classes, ids, labels, features, logits)?))
    })
}

/// Writes a table as EMB1.
///
/// # Safety
/// `table` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_save(table: *const InfoselTable, path: *const c_char) -> InfoselStatus {
    guard(|| {
        let t = as_ref(table, "table")?;
        let path = path_arg(path, "path")?;
        Ok(t.0.save(&path)?)
    })
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_len(table: *const InfoselTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Feature dimension; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_dim(table: *const InfoselTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.dim())
}

/// Class count; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_n_classes(table: *const InfoselTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.n_classes())
}

/// Copies the sample ids (ascending) into `dst` and returns the row count.
///
/// # Safety
/// `table` must be a live handle; `dst` null or writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_ids(table: *const InfoselTable, dst: *mut u64, cap: usize) -> usize {
    table.as_ref().map_or(0, |t| copy_ids(t.0.sample_ids(), dst, cap))
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn infosel_table_free(table: *mut InfoselTable) {
    free(table)
}

/// Scores every row of `table`. Distance entropy and metric use the class
/// means of `prototypes_from`, or of `table` itself when that is null.
/// Probability entropy needs logits in `table`.
///
/// # Safety
/// `table` must be a live handle, `prototypes_from` null or a live handle,
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn infosel_score(
    table: *const InfoselTable,
    prototypes_from: *const InfoselTable,
    indicator: InfoselIndicator,
    out: *mut *mut InfoselScores,
) -> InfoselStatus {
    guard(|| {
        let t = &as_ref(table, "table")?.0;
        let scores = match indicator {
            InfoselIndicator::ProbabilityEntropy => iei::probability_entropy_scores(t)?,
            InfoselIndicator::DistanceEntropy | InfoselIndicator::Metric => {
                let source = prototypes_from.as_ref().map_or(t, |p| &p.0);
                let protos = iei::class_prototypes(source)?;
                if indicator == InfoselIndicator::Metric {
                    iei::metric_scores(t, &protos)?
                } else {
                    iei::distance_entropy_scores(t, &protos)?
                }
            }
        };
        put(out, InfoselScores(scores))
    })
}

/// Number of scored rows; 0 for a null handle.
///
/// # Safety
/// `scores` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn infosel_scores_len(scores: *const InfoselScores) -> usize {
    scores.as_ref().map_or(0, |s| s.0.len())
}

/// Reads row `index` (rows are in ascending id order).
///
/// # Safety
/// `scores` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn infosel_scores_get(
    scores: *const InfoselScores,
    index: usize,
    id: *mut u64,
    label: *mut u32,
    score: *mut f64,
) -> InfoselStatus {
    guard(|| {
        let s = &as_ref(scores, "scores")?.0;
        if id.is_null() || label.is_null() || score.is_null() {
            return Err(Failure::Null("id, label and score"));
        }
        if index >= s.len() {
            return Err(Error::InvalidArgument(format!("index {index} out of range for {} rows", s.len())).into());
        }
        *id = s.sample_ids[index];
        *label = s.labels[index];
        *score = s.scores[index];
        Ok(())
    })
}

/// # Safety
/// `scores` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn infosel_scores_free(scores: *mut InfoselScores) {
    free(scores)
}

/// Selects `budget` rows from `scores`.
///
/// # Safety
/// `scores` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn infosel_select(
    scores: *const InfoselScores,
    budget: usize,
    scheme: InfoselScheme,
    direction: InfoselDirection,
    out: *mut *mut InfoselPlan,
) -> InfoselStatus {
    guard(|| {
        let s = &as_ref(scores, "scores")?.0;
        let kind = match scheme {
            InfoselScheme::Balanced => BudgetKind::Balanced,
            InfoselScheme::Unbalanced => BudgetKind::Unbalanced,
        };
        let direction = match direction {
            InfoselDirection::Goodset => Direction::Goodset,
            InfoselDirection::Badset => Direction::Badset,
        };
        let stats = selection::class_distribution_stats(s)?;
        let plan = selection::select(s, &BudgetScheme::new(kind, budget)?, direction, &stats)?;
        put(out, InfoselPlan(plan))
    })
}

/// Copies the selected ids (class-major, best first) into `dst` and returns
/// how many there are.
///
/// # Safety
/// `plan` must be a live handle; `dst` null or writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn infosel_plan_ids(plan: *const InfoselPlan, dst: *mut u64, cap: usize) -> usize {
    plan.as_ref().map_or(0, |p| copy_ids(&p.0.selected_ids, dst, cap))
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn infosel_plan_free(plan: *mut InfoselPlan) {
    free(plan)
}

/// Splits `train` by distance to the class means of `test`. With
/// `per_class` non-zero the `fraction` applies within each class.
///
/// # Safety
/// `train` and `test` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn infosel_split(
    train: *const InfoselTable,
    test: *const InfoselTable,
    fraction: f64,
    per_class: bool,
    out: *mut *mut InfoselSplit,
) -> InfoselStatus {
    guard(|| {
        let train = &as_ref(train, "train")?.0;
        let test = &as_ref(test, "test")?.0;
        let protos = ood::test_domain_prototypes(test)?;
        let d = ood::migration_distances(train, &protos)?;
        put(out, InfoselSplit(ood::migration_split(&d, fraction, per_class)?))
    })
}

/// Copies the positive ids (ascending) into `dst`; returns their count.
///
/// # Safety
/// `split` must be a live handle; `dst` null or writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn infosel_split_positive_ids(split: *const InfoselSplit, dst: *mut u64, cap: usize) -> usize {
    split.as_ref().map_or(0, |s| copy_ids(&s.0.positive_ids, dst, cap))
}

/// Copies the negative ids (ascending) into `dst`; returns their count.
///
/// # Safety
/// `split` must be a live handle; `dst` null or writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn infosel_split_negative_ids(split: *const InfoselSplit, dst: *mut u64, cap: usize) -> usize {
    split.as_ref().map_or(0, |s| copy_ids(&s.0.negative_ids, dst, cap))
}

/// # Safety
/// `split` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn infosel_split_free(split: *mut InfoselSplit) {
    free(split)
}

/// Fits a probe on `train` and writes its accuracy on `test`.
///
/// # Safety
/// `train`, `test` and `config` must be valid; `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn infosel_eval(
    train: *const InfoselTable,
    test: *const InfoselTable,
    config: *const InfoselProbeConfig,
    accuracy: *mut f64,
) -> InfoselStatus {
    guard(|| {
        let train = &as_ref(train, "train")?.0;
        let test = &as_ref(test, "test")?.0;
        let c = as_ref(config, "config")?;
        if accuracy.is_null() {
            return Err(Failure::Null("accuracy"));
        }
        let cfg = ProbeConfig {
            kind: match c.kind {
                InfoselProbeKind::Linear => ProbeKind::Linear,
                InfoselProbeKind::NearestPrototype => ProbeKind::NearestPrototype,
            },
            step_size: c.step_size,
            epochs: c.epochs,
            l2: c.l2,
            seed: c.seed,
        };
        let model = probe::fit(train, &cfg)?;
        *accuracy = probe::evaluate(&model, test)?;
        Ok(())
    })
}

//! C ABI over `kge-core`.
//!
//! Handles are opaque pointers created by `*_open` functions and released with
//! the matching `*_free`. Every fallible call returns a [`KgeStatus`]; on
//! failure [`kge_last_error`] describes what went wrong on the calling thread.
//! Enum-valued arguments are passed as `int32_t` and checked, so an
//! out-of-range value is reported instead of being undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use kge_core::anchors::{read_token_cache, TokenError};
use kge_core::encoder::Mat;
use kge_core::eval::{evaluate_split, rank_query, Candidates, EvalError, EvalOptions, TiePolicy};
use kge_core::graph::{load_triples, read_store_dir, Direction, GraphError, Split, Triple, TripleFormat, TripleStore};
use kge_core::training::{Checkpoint, EntityRepr, Model, TrainError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    OutOfRange = 6,
    MissingTokens = 7,
    Panic = 99,
}

/// Values accepted by `split` arguments.
#[repr(C)]
pub enum KgeSplit {
    Train = 0,
    Valid = 1,
    Test = 2,
}

/// Values accepted by `direction` arguments: which side of the triple is ranked.
#[repr(C)]
pub enum KgeDirection {
    Head = 0,
    Tail = 1,
}

/// Values accepted by `tie_policy` arguments.
#[repr(C)]
pub enum KgeTiePolicy {
    Optimistic = 0,
    Pessimistic = 1,
    Mean = 2,
}

/// Filtered link-prediction metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KgeMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    /// Number of ranked queries.
    pub count: usize,
}

/// Opaque triple store.
pub struct KgeStore {
    store: TripleStore,
}

/// Opaque trained model with its entity table materialised.
pub struct KgeModel {
    model: Model<f32>,
    entity: Mat<f32>,
}

struct Failure {
    status: KgeStatus,
    message: String,
}

impl Failure {
    fn new(status: KgeStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        let status = match e {
            GraphError::Io(_) => KgeStatus::Io,
            GraphError::IdOutOfRange { .. } | GraphError::InvalidTriple { .. } => KgeStatus::OutOfRange,
            _ => KgeStatus::Format,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let status = match e {
            TrainError::Io(_) => KgeStatus::Io,
            TrainError::Checkpoint(_) => KgeStatus::Format,
            TrainError::DimensionMismatch(_) => KgeStatus::DimensionMismatch,
            TrainError::MissingTokens | TrainError::TokenMismatch(_) => KgeStatus::MissingTokens,
            _ => KgeStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<TokenError> for Failure {
    fn from(e: TokenError) -> Self {
        let status = match e {
            TokenError::Io(_) => KgeStatus::Io,
            TokenError::Format(_) => KgeStatus::Format,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::Io(_) => KgeStatus::Io,
            _ => KgeStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(KgeStatus::Io, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into a status plus a last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            KgeStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            set_last_error(&format!("internal error: {msg}"));
            KgeStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(KgeStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller provides a valid, writable location or null.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(KgeStatus::NullPointer, format!("{what} is null")))
}

fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(KgeStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::new(KgeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

fn open(path: &PathBuf) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::new(KgeStatus::Io, format!("{}: {e}", path.display())))
}

fn split_arg(v: i32) -> Result<Split, Failure> {
    match v {
        0 => Ok(Split::Train),
        1 => Ok(Split::Valid),
        2 => Ok(Split::Test),
        _ => Err(Failure::new(KgeStatus::InvalidArgument, format!("unknown split {v}"))),
    }
}

fn direction_arg(v: i32) -> Result<Direction, Failure> {
    match v {
        0 => Ok(Direction::Head),
        1 => Ok(Direction::Tail),
        _ => Err(Failure::new(
            KgeStatus::InvalidArgument,
            format!("unknown direction {v}"),
        )),
    }
}

fn tie_arg(v: i32) -> Result<TiePolicy, Failure> {
    match v {
        0 => Ok(TiePolicy::Optimistic),
        1 => Ok(TiePolicy::Pessimistic),
        2 => Ok(TiePolicy::Mean),
        _ => Err(Failure::new(
            KgeStatus::InvalidArgument,
            format!("unknown tie policy {v}"),
        )),
    }
}

impl KgeModel {
    fn triple(&self, h: u32, r: u32, t: u32) -> Result<Triple, Failure> {
        let (ne, nr) = (self.model.num_entities() as u32, self.model.num_relations() as u32);
        if h >= ne || t >= ne || r >= nr {
            return Err(Failure::new(
                KgeStatus::OutOfRange,
                format!("triple ({h}, {r}, {t}) outside {ne} entities / {nr} relations"),
            ));
        }
        Ok(Triple::new(h, r, t))
    }

    fn fits(&self, store: &TripleStore) -> Result<(), Failure> {
        if self.model.num_entities() != store.num_entities() || self.model.num_relations() != store.num_relations() {
            return Err(Failure::new(
                KgeStatus::DimensionMismatch,
                format!(
                    "model has {} entities / {} relations, store has {} / {}",
                    self.model.num_entities(),
                    self.model.num_relations(),
                    store.num_entities(),
                    store.num_relations()
                ),
            ));
        }
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn kge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a store directory written by `kge ingest`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kge_store_open(dir: *const c_char, out: *mut *mut KgeStore) -> KgeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let store = read_store_dir(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(KgeStore { store }));
        Ok(())
    })
}

/// Parses tab-separated triple files. `valid` and `test` may be null.
/// With `numeric` set, fields are decimal ids; otherwise they are labels.
///
/// # Safety
/// Paths must be null or NUL-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kge_store_load_triples(
    train: *const c_char,
    valid: *const c_char,
    test: *const c_char,
    numeric: bool,
    out: *mut *mut KgeStore,
) -> KgeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut sources: Vec<Box<dyn std::io::BufRead>> = vec![Box::new(open(&path_arg(train, "train")?)?)];
        for (p, what) in [(valid, "valid"), (test, "test")] {
            sources.push(if p.is_null() {
                Box::new(std::io::empty())
            } else {
                Box::new(open(&path_arg(p, what)?)?)
            });
        }
        let sources: [Box<dyn std::io::BufRead>; 3] = sources.try_into().ok().expect("three sources");
        let format = if numeric {
            TripleFormat::Numeric {
                num_entities: None,
                num_relations: None,
            }
        } else {
            TripleFormat::Labels
        };
        let store = load_triples(sources, format)?;
        *out = Box::into_raw(Box::new(KgeStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_store_num_entities(store: *const KgeStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.num_entities())
}

/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_store_num_relations(store: *const KgeStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.num_relations())
}

/// Number of triples in `split`; 0 for a null store or unknown split.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_store_split_len(store: *const KgeStore, split: i32) -> usize {
    match (store.as_ref(), split_arg(split)) {
        (Some(s), Ok(split)) => s.store.split(split).len(),
        _ => 0,
    }
}

/// Looks up an entity label.
///
/// # Safety
/// `store` must be a live handle, `label` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kge_store_entity_id(store: *const KgeStore, label: *const c_char, out: *mut u32) -> KgeStatus {
    guard(|| {
        let s = non_null(store, "store")?;
        let out = out_ptr(out, "out")?;
        let label = str_arg(label, "label")?;
        *out = s
            .store
            .entities
            .get(label)
            .ok_or_else(|| Failure::new(KgeStatus::OutOfRange, format!("unknown entity `{label}`")))?;
        Ok(())
    })
}

/// Looks up a relation label.
///
/// # Safety
/// `store` must be a live handle, `label` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kge_store_relation_id(
    store: *const KgeStore,
    label: *const c_char,
    out: *mut u32,
) -> KgeStatus {
    guard(|| {
        let s = non_null(store, "store")?;
        let out = out_ptr(out, "out")?;
        let label = str_arg(label, "label")?;
        *out = s
            .store
            .relations
            .get(label)
            .ok_or_else(|| Failure::new(KgeStatus::OutOfRange, format!("unknown relation `{label}`")))?;
        Ok(())
    })
}

/// # Safety
/// `store` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kge_store_free(store: *mut KgeStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Loads an f32 checkpoint. Token-based models need the token cache written by
/// `kge tokenize`; pass null for direct-lookup models. Entity vectors are
/// encoded once here using `threads` workers.
///
/// # Safety
/// Paths must be null or NUL-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kge_model_open(
    checkpoint: *const c_char,
    tokens: *const c_char,
    threads: usize,
    out: *mut *mut KgeModel,
) -> KgeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(checkpoint, "checkpoint")?;
        let mut bytes = Vec::new();
        open(&path)?.read_to_end(&mut bytes)?;
        let ck = Checkpoint::<f32>::from_bytes(&bytes, None)?;
        let tok = match (ck.config.entity_repr, tokens.is_null()) {
            (EntityRepr::Tokens, true) => return Err(TrainError::MissingTokens.into()),
            (EntityRepr::Tokens, false) => Some(read_token_cache(open(&path_arg(tokens, "tokens")?)?)?),
            (EntityRepr::Direct, _) => None,
        };
        let entity = ck.model.entity_table(tok.as_ref(), threads.max(1))?.into_owned();
        *out = Box::into_raw(Box::new(KgeModel {
            model: ck.model,
            entity,
        }));
        Ok(())
    })
}

/// Embedding dimension `d`.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_model_dim(model: *const KgeModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.layout.dim)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_model_num_entities(model: *const KgeModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_entities())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kge_model_num_relations(model: *const KgeModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_relations())
}

/// Writes the lower-is-better score `d_r(h, t)` of one triple.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kge_model_score(
    model: *const KgeModel,
    head: u32,
    relation: u32,
    tail: u32,
    out: *mut f32,
) -> KgeStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let out = out_ptr(out, "out")?;
        let t = m.triple(head, relation, tail)?;
        *out = m.model.scorer(&m.entity).d_r(&t);
        Ok(())
    })
}

/// Scores `n` triples laid out as `[h0, r0, t0, h1, r1, t1, ...]` into `out[0..n]`.
///
/// # Safety
/// `triples` must hold `3 * n` values and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn kge_model_score_batch(
    model: *const KgeModel,
    triples: *const u32,
    n: usize,
    out: *mut f32,
) -> KgeStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if n == 0 {
            return Ok(());
        }
        if triples.is_null() || out.is_null() {
            return Err(Failure::new(KgeStatus::NullPointer, "triples or out is null"));
        }
        let ids = std::slice::from_raw_parts(triples, 3 * n);
        let out = std::slice::from_raw_parts_mut(out, n);
        let scorer = m.model.scorer(&m.entity);
        for (i, c) in ids.chunks_exact(3).enumerate() {
            out[i] = scorer.d_r(&m.triple(c[0], c[1], c[2])?);
        }
        Ok(())
    })
}

/// Filtered rank of the gold entity when `direction` of the triple is replaced
/// by every other entity. Known triples of all splits in `store` are filtered.
///
/// # Safety
/// `model` and `store` must be live handles and `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn kge_model_rank(
    model: *const KgeModel,
    store: *const KgeStore,
    head: u32,
    relation: u32,
    tail: u32,
    direction: i32,
    tie_policy: i32,
    out: *mut f64,
) -> KgeStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let s = non_null(store, "store")?;
        let out = out_ptr(out, "out")?;
        m.fits(&s.store)?;
        let t = m.triple(head, relation, tail)?;
        let scorer = m.model.scorer(&m.entity);
        let r = rank_query(
            &scorer,
            &s.store,
            &t,
            direction_arg(direction)?,
            Candidates::FilteredFull,
            tie_arg(tie_policy)?,
        )?;
        *out = r.rank;
        Ok(())
    })
}

/// Filtered MRR and Hits@{1,3,10} over head and tail queries of `split`.
///
/// # Safety
/// `model` and `store` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kge_model_evaluate(
    model: *const KgeModel,
    store: *const KgeStore,
    split: i32,
    tie_policy: i32,
    threads: usize,
    out: *mut KgeMetrics,
) -> KgeStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let s = non_null(store, "store")?;
        let out = out_ptr(out, "out")?;
        m.fits(&s.store)?;
        let opts = EvalOptions {
            tie_policy: tie_arg(tie_policy)?,
            threads: threads.max(1),
            ..Default::default()
        };
        let triples = s.store.split(split_arg(split)?);
        let report = evaluate_split(&m.model.scorer(&m.entity), &s.store, triples, &opts, None)?;
        *out = KgeMetrics {
            mrr: report.mrr,
            hits_at_1: report.hits(1).unwrap_or(0.0),
            hits_at_3: report.hits(3).unwrap_or(0.0),
            hits_at_10: report.hits(10).unwrap_or(0.0),
            count: report.count,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kge_model_free(model: *mut KgeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

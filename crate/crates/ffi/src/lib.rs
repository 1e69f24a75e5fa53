//! C ABI over the gem-dst library.
//!
//! Every fallible function returns a [`GemStatus`]. On failure the message is
//! available through [`gem_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gem_dst::dialogue::Corpus;
use gem_dst::eval::{parse_turn_results, Metrics};
use gem_dst::retrieval::{EmbeddingProvider, ExampleRecord, HashEmbeddingProvider, VectorIndex};
use gem_dst::router::{route, AccuracyTable, Expert};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    MissingDomain = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemExpert {
    Gnn = 0,
    Seq = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemRouteDecision {
    pub expert: GemExpert,
    pub votes_gnn: u32,
    pub votes_seq: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GemMetrics {
    pub user_turns: u64,
    pub jga: f64,
    pub jta: f64,
    pub intent_acc: f64,
    pub domain_acc: f64,
    pub slot_acc: f64,
}

pub struct GemCorpus(Corpus);

pub struct GemAccuracyTable(AccuracyTable);

pub struct GemIndex(VectorIndex);

pub struct GemHashEmbedder(HashEmbeddingProvider);

struct Failure(GemStatus, String);

impl Failure {
    fn new(status: GemStatus, message: impl ToString) -> Self {
        Self(status, message.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GemStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("panic inside gem-dst");
            GemStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            GemStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(GemStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(GemStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(Failure::new(
            GemStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(
            GemStatus::NullPointer,
            "output pointer is null",
        ));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    write_out(out, Box::into_raw(Box::new(value)))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null after a success.
///
/// The pointer stays valid until the next gem-dst call on the same thread.
#[no_mangle]
pub extern "C" fn gem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a gem-dst function that hands over ownership and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a corpus envelope from JSON.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gem_corpus_from_json(
    json: *const c_char,
    out: *mut *mut GemCorpus,
) -> GemStatus {
    guard(|| {
        let corpus = Corpus::from_json(text(json, "json")?)
            .map_err(|e| Failure::new(GemStatus::Parse, e))?;
        write_handle(out, GemCorpus(corpus))
    })
}

/// Number of dialogues in the corpus; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gem_corpus_dialogue_count(corpus: *const GemCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.dialogues.len())
}

/// Number of user turns across the corpus; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gem_corpus_user_turn_count(corpus: *const GemCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.user_turn_count())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gem_corpus_free(corpus: *mut GemCorpus) {
    free(corpus)
}

/// Parses a router accuracy table from its CSV form.
///
/// # Safety
/// `csv` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gem_accuracy_table_from_csv(
    csv: *const c_char,
    out: *mut *mut GemAccuracyTable,
) -> GemStatus {
    guard(|| {
        let table = AccuracyTable::from_csv(text(csv, "csv")?)
            .map_err(|e| Failure::new(GemStatus::Parse, e))?;
        write_handle(out, GemAccuracyTable(table))
    })
}

/// Routes one turn given its active domains by majority vote over the table.
///
/// # Safety
/// `domains` must point to `count` valid NUL-terminated strings (or be null when `count` is 0).
#[no_mangle]
pub unsafe extern "C" fn gem_accuracy_table_route(
    table: *const GemAccuracyTable,
    domains: *const *const c_char,
    count: usize,
    out: *mut GemRouteDecision,
) -> GemStatus {
    guard(|| {
        let table = handle(table, "table")?;
        let mut active = BTreeSet::new();
        if count > 0 {
            if domains.is_null() {
                return Err(Failure::new(GemStatus::NullPointer, "domains is null"));
            }
            for &d in std::slice::from_raw_parts(domains, count) {
                active.insert(text(d, "domain")?.to_string());
            }
        }
        let decision =
            route(&active, &table.0).map_err(|e| Failure::new(GemStatus::MissingDomain, e))?;
        write_out(
            out,
            GemRouteDecision {
                expert: match decision.chosen {
                    Expert::Gnn => GemExpert::Gnn,
                    Expert::Seq => GemExpert::Seq,
                },
                votes_gnn: decision.votes_gnn as u32,
                votes_seq: decision.votes_seq as u32,
            },
        )
    })
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gem_accuracy_table_free(table: *mut GemAccuracyTable) {
    free(table)
}

/// Creates an empty index of the given dimension.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gem_index_new(dimension: usize, out: *mut *mut GemIndex) -> GemStatus {
    guard(|| {
        if dimension == 0 {
            return Err(Failure::new(
                GemStatus::InvalidArgument,
                "dimension must be positive",
            ));
        }
        write_handle(out, GemIndex(VectorIndex::new(dimension)))
    })
}

/// Opens an index file written by `gem build-index`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gem_index_open(path: *const c_char, out: *mut *mut GemIndex) -> GemStatus {
    guard(|| {
        let path = text(path, "path")?;
        let index =
            VectorIndex::open(path.as_ref(), None).map_err(|e| Failure::new(GemStatus::Io, e))?;
        write_handle(out, GemIndex(index))
    })
}

/// Adds one example with an empty text and no gold pairs.
///
/// # Safety
/// `embedding` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gem_index_insert(
    index: *mut GemIndex,
    id: *const c_char,
    embedding: *const f64,
    len: usize,
) -> GemStatus {
    guard(|| {
        let index = index
            .as_mut()
            .ok_or_else(|| Failure::new(GemStatus::NullPointer, "index is null"))?;
        let record = ExampleRecord {
            id: text(id, "id")?.to_string(),
            embedding: slice(embedding, len, "embedding")?.to_vec(),
            combined_text: String::new(),
            gold_pairs: Default::default(),
        };
        index
            .0
            .insert(record)
            .map_err(|e| Failure::new(GemStatus::InvalidArgument, e))
    })
}

/// Number of records; 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gem_index_len(index: *const GemIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Top-k records with similarity above `tau` as a JSON array of `{"id", "similarity"}`.
///
/// The string in `out_json` is owned by the caller and released with [`gem_string_free`].
///
/// # Safety
/// `query` must point to `len` doubles and `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gem_index_query(
    index: *const GemIndex,
    query: *const f64,
    len: usize,
    k: usize,
    tau: f64,
    out_json: *mut *mut c_char,
) -> GemStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let hits = index
            .0
            .query_topk(slice(query, len, "query")?, k, tau)
            .map_err(|e| Failure::new(GemStatus::InvalidArgument, e))?;
        let json: Vec<_> = hits
            .iter()
            .map(|h| serde_json::json!({"id": h.record.id, "similarity": h.similarity}))
            .collect();
        let s =
            CString::new(serde_json::Value::from(json).to_string()).expect("json has no nul bytes");
        write_out(out_json, s.into_raw())
    })
}

/// # Safety
/// `index` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gem_index_free(index: *mut GemIndex) {
    free(index)
}

/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gem_hash_embedder_new(
    dimension: usize,
    out: *mut *mut GemHashEmbedder,
) -> GemStatus {
    guard(|| {
        if dimension == 0 {
            return Err(Failure::new(
                GemStatus::InvalidArgument,
                "dimension must be positive",
            ));
        }
        write_handle(out, GemHashEmbedder(HashEmbeddingProvider::new(dimension)))
    })
}

/// Embedding width; 0 for a null handle.
///
/// # Safety
/// `embedder` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gem_hash_embedder_dimension(embedder: *const GemHashEmbedder) -> usize {
    embedder.as_ref().map_or(0, |e| e.0.dimension())
}

/// Writes the embedding of `input` into `out`, which must hold `capacity` doubles.
///
/// # Safety
/// `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gem_hash_embedder_embed(
    embedder: *const GemHashEmbedder,
    input: *const c_char,
    out: *mut f64,
    capacity: usize,
) -> GemStatus {
    guard(|| {
        let embedder = handle(embedder, "embedder")?;
        let v = embedder
            .0
            .embed(text(input, "text")?)
            .map_err(|e| Failure::new(GemStatus::InvalidArgument, e))?;
        if capacity < v.len() {
            return Err(Failure::new(
                GemStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", v.len()),
            ));
        }
        if out.is_null() {
            return Err(Failure::new(
                GemStatus::NullPointer,
                "output buffer is null",
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// # Safety
/// `embedder` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gem_hash_embedder_free(embedder: *mut GemHashEmbedder) {
    free(embedder)
}

/// Scores the turn results in a `turns.jsonl` document.
///
/// # Safety
/// `jsonl` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gem_metrics_from_jsonl(
    jsonl: *const c_char,
    out: *mut GemMetrics,
) -> GemStatus {
    guard(|| {
        let results = parse_turn_results(text(jsonl, "jsonl")?)
            .map_err(|e| Failure::new(GemStatus::Parse, e))?;
        let m = Metrics::from_results(&results)
            .map_err(|e| Failure::new(GemStatus::InvalidArgument, e))?;
        write_out(
            out,
            GemMetrics {
                user_turns: m.user_turns as u64,
                jga: m.jga,
                jta: m.jta,
                intent_acc: m.intent_acc,
                domain_acc: m.domain_acc,
                slot_acc: m.slot_acc,
            },
        )
    })
}

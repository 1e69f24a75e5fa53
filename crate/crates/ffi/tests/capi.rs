use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gem_dst::dialogue::{load_multiwoz_dir, Corpus, LabelMode};
use gem_dst_ffi::*;
use serde_json::{json, Value};

fn last_error() -> String {
    let p = gem_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fixture_corpus() -> String {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/multiwoz");
    let data = load_multiwoz_dir(&dir, LabelMode::Strict).unwrap();
    Corpus::new(data.ontology, data.splits["test"].clone()).to_json()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(gem_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn corpus_handle_counts_dialogues() {
    let json = CString::new(fixture_corpus()).unwrap();
    let mut corpus = ptr::null_mut();
    unsafe {
        assert_eq!(
            gem_corpus_from_json(json.as_ptr(), &mut corpus),
            GemStatus::Ok
        );
        assert!(gem_last_error_message().is_null());
        assert_eq!(gem_corpus_dialogue_count(corpus), 6);
        assert!(gem_corpus_user_turn_count(corpus) > 6);
        gem_corpus_free(corpus);
        assert_eq!(gem_corpus_dialogue_count(ptr::null()), 0);
    }
}

#[test]
fn malformed_input_sets_status_and_message() {
    let bad = CString::new("{not json").unwrap();
    let mut corpus = ptr::null_mut();
    unsafe {
        assert_eq!(
            gem_corpus_from_json(bad.as_ptr(), &mut corpus),
            GemStatus::Parse
        );
        assert!(corpus.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            gem_corpus_from_json(ptr::null(), &mut corpus),
            GemStatus::NullPointer
        );
        assert!(last_error().contains("json"));
        let invalid = [0xffu8, 0];
        assert_eq!(
            gem_corpus_from_json(invalid.as_ptr().cast(), &mut corpus),
            GemStatus::InvalidUtf8
        );
    }
}

#[test]
fn routing_through_the_table_handle() {
    let csv = CString::new(
        "domain,acc_gnn,acc_seq,turns\nattraction,0.8,0.6,10\nhotel,0.5,0.7,10\ntaxi,0.6,0.6,4\n",
    )
    .unwrap();
    let mut table = ptr::null_mut();
    let route_of = |table: *const GemAccuracyTable, names: &[&str]| {
        let owned: Vec<CString> = names.iter().map(|n| CString::new(*n).unwrap()).collect();
        let ptrs: Vec<*const c_char> = owned.iter().map(|c| c.as_ptr()).collect();
        let mut out = GemRouteDecision {
            expert: GemExpert::Seq,
            votes_gnn: 99,
            votes_seq: 99,
        };
        let status =
            unsafe { gem_accuracy_table_route(table, ptrs.as_ptr(), ptrs.len(), &mut out) };
        (status, out)
    };
    unsafe {
        assert_eq!(
            gem_accuracy_table_from_csv(csv.as_ptr(), &mut table),
            GemStatus::Ok
        );
        let (status, d) = route_of(table, &["attraction"]);
        assert_eq!(
            (status, d.expert, d.votes_gnn, d.votes_seq),
            (GemStatus::Ok, GemExpert::Gnn, 1, 0)
        );
        let (_, d) = route_of(table, &["attraction", "hotel", "taxi"]);
        assert_eq!((d.expert, d.votes_gnn, d.votes_seq), (GemExpert::Seq, 1, 2));
        let (_, d) = route_of(table, &["attraction", "hotel"]);
        assert_eq!(d.expert, GemExpert::Gnn);
        let mut empty = GemRouteDecision {
            expert: GemExpert::Seq,
            votes_gnn: 0,
            votes_seq: 0,
        };
        assert_eq!(
            gem_accuracy_table_route(table, ptr::null(), 0, &mut empty),
            GemStatus::Ok
        );
        assert_eq!(empty.expert, GemExpert::Gnn);
        let (status, _) = route_of(table, &["police"]);
        assert_eq!(status, GemStatus::MissingDomain);
        assert!(last_error().contains("police"));
        gem_accuracy_table_free(table);
    }
}

#[test]
fn index_query_returns_ranked_json() {
    let mut embedder = ptr::null_mut();
    let mut index = ptr::null_mut();
    unsafe {
        assert_eq!(gem_hash_embedder_new(32, &mut embedder), GemStatus::Ok);
        assert_eq!(gem_hash_embedder_dimension(embedder), 32);
        assert_eq!(gem_index_new(32, &mut index), GemStatus::Ok);
        let texts = [
            "cheap hotel in the north",
            "train to cambridge on monday",
            "hotel north cheap parking",
        ];
        for (i, t) in texts.iter().enumerate() {
            let mut v = vec![0.0; 32];
            let t = CString::new(*t).unwrap();
            assert_eq!(
                gem_hash_embedder_embed(embedder, t.as_ptr(), v.as_mut_ptr(), v.len()),
                GemStatus::Ok
            );
            let id = CString::new(format!("r{i}")).unwrap();
            assert_eq!(
                gem_index_insert(index, id.as_ptr(), v.as_ptr(), v.len()),
                GemStatus::Ok
            );
        }
        assert_eq!(gem_index_len(index), 3);
        let dup = CString::new("r0").unwrap();
        let one = [1.0; 32];
        assert_eq!(
            gem_index_insert(index, dup.as_ptr(), one.as_ptr(), 32),
            GemStatus::InvalidArgument
        );

        let mut q = vec![0.0; 32];
        let text = CString::new("cheap hotel north").unwrap();
        let mut small = [0.0; 4];
        assert_eq!(
            gem_hash_embedder_embed(embedder, text.as_ptr(), small.as_mut_ptr(), small.len()),
            GemStatus::BufferTooSmall
        );
        gem_hash_embedder_embed(embedder, text.as_ptr(), q.as_mut_ptr(), q.len());
        let mut out = ptr::null_mut();
        assert_eq!(
            gem_index_query(index, q.as_ptr(), q.len(), 2, 0.0, &mut out),
            GemStatus::Ok
        );
        let hits: Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        gem_string_free(out);
        let ids: Vec<&str> = hits
            .as_array()
            .unwrap()
            .iter()
            .map(|h| h["id"].as_str().unwrap())
            .collect();
        assert_eq!(ids.len(), 2);
        assert!(ids.iter().all(|id| *id == "r0" || *id == "r2"));
        let sims: Vec<f64> = hits
            .as_array()
            .unwrap()
            .iter()
            .map(|h| h["similarity"].as_f64().unwrap())
            .collect();
        assert!(sims[0] >= sims[1]);

        let mut out = ptr::null_mut();
        assert_eq!(
            gem_index_query(index, q.as_ptr(), 3, 2, 0.0, &mut out),
            GemStatus::InvalidArgument
        );
        assert!(out.is_null());
        gem_index_free(index);
        gem_hash_embedder_free(embedder);
    }
}

fn turn_line(id: &str, predicted_state: Value, gold_state: Value, slots_right: bool) -> String {
    let gold_slots = json!(["hotel-area"]);
    json!({
        "dialogue_id": id,
        "turn": 0,
        "route": null,
        "expert": "seq",
        "predicted_intents": ["find_hotel"],
        "predicted_domains": ["hotel"],
        "predicted_slots": if slots_right { gold_slots.clone() } else { json!([]) },
        "predicted_turn_pairs": predicted_state,
        "predicted_state": predicted_state,
        "gold_intents": ["find_hotel"],
        "gold_domains": ["hotel"],
        "gold_slots": gold_slots,
        "gold_turn_pairs": gold_state,
        "gold_state": gold_state,
        "retrieved": [],
        "generation": {"mode": "skipped"},
        "timings": {"classify_ms": 0.0, "route_ms": 0.0, "expert_ms": 0.0, "retrieve_ms": 0.0, "generate_ms": 0.0},
        "failure": null
    })
    .to_string()
}

#[test]
fn metrics_from_turn_results() {
    let jsonl = [
        turn_line(
            "a",
            json!({"hotel-area": "north"}),
            json!({"hotel-area": "north"}),
            true,
        ),
        String::new(),
        turn_line(
            "b",
            json!({"hotel-area": "south"}),
            json!({"hotel-area": "north"}),
            false,
        ),
    ]
    .join("\n");
    let jsonl = CString::new(jsonl).unwrap();
    let mut m = GemMetrics::default();
    unsafe {
        assert_eq!(
            gem_metrics_from_jsonl(jsonl.as_ptr(), &mut m),
            GemStatus::Ok
        );
        assert_eq!(m.user_turns, 2);
        assert_eq!(
            (m.jga, m.jta, m.intent_acc, m.slot_acc),
            (0.5, 0.5, 1.0, 0.5)
        );
        let empty = CString::new("").unwrap();
        assert_eq!(
            gem_metrics_from_jsonl(empty.as_ptr(), &mut m),
            GemStatus::InvalidArgument
        );
        let broken = CString::new("{}\n").unwrap();
        assert_eq!(
            gem_metrics_from_jsonl(broken.as_ptr(), &mut m),
            GemStatus::Parse
        );
        assert!(last_error().starts_with("line 1"));
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_generated_header() {
    let lib = target_dir().join("libgem_dst_ffi.a");
    if !lib.exists() {
        panic!("static library missing at {}", lib.display());
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "gem_dst.h"

int main(void) {
    GemAccuracyTable *table = NULL;
    const char *csv = "domain,acc_gnn,acc_seq,turns\ntrain,0.85,0.7,3\n";
    if (gem_accuracy_table_from_csv(csv, &table) != GEM_STATUS_OK) return 1;
    const char *domains[] = {"train"};
    GemRouteDecision d;
    if (gem_accuracy_table_route(table, domains, 1, &d) != GEM_STATUS_OK) return 2;
    if (d.expert != GEM_EXPERT_GNN || d.votes_gnn != 1) return 3;
    const char *missing[] = {"bus"};
    if (gem_accuracy_table_route(table, missing, 1, &d) != GEM_STATUS_MISSING_DOMAIN) return 4;
    if (gem_last_error_message() == NULL) return 5;
    gem_accuracy_table_free(table);
    printf("%s\n", gem_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        env!("CARGO_PKG_VERSION")
    );
}

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use kge_core::anchors::{select_global_anchors, write_token_cache, AnchorStrategy, TokenConfig, Tokenization};
use kge_core::eval::{evaluate_split, rank_query, Candidates, EvalOptions, TiePolicy};
use kge_core::graph::{write_store_dir, Direction, Triple, TripleStore, Vocab};
use kge_core::scoring::ModelKind;
use kge_core::training::{train, EntityRepr, TrainConfig, TrainOptions};
use kge_ffi::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(s: &Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(kge_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn toy_store() -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut all = std::collections::BTreeSet::new();
    while all.len() < 240 {
        all.insert(Triple::new(
            rng.gen_range(0..40),
            rng.gen_range(0..3),
            rng.gen_range(0..40),
        ));
    }
    let mut all: Vec<Triple> = all.into_iter().collect();
    let test = all.split_off(220);
    let valid = all.split_off(200);
    TripleStore::new(Vocab::numeric(40), Vocab::numeric(3), all, valid, test).unwrap()
}

fn config(repr: EntityRepr) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model = ModelKind::InterHT;
    cfg.dim = 8;
    cfg.gamma = 4.0;
    cfg.lr = 0.01;
    cfg.batch_size = 16;
    cfg.neg_size = 4;
    cfg.steps_max = 40;
    cfg.valid_every = 1000;
    cfg.log_every = 1000;
    cfg.entity_repr = repr;
    cfg.d_tok = 8;
    cfg.heads = 2;
    cfg
}

struct Fixture {
    _dir: tempfile::TempDir,
    store_dir: PathBuf,
    direct: PathBuf,
    tokens_model: PathBuf,
    tokens: PathBuf,
    store: TripleStore,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = toy_store();
    let store_dir = dir.path().join("store");
    write_store_dir(&store, &store_dir).unwrap();

    let anchors = select_global_anchors(&store, 5, AnchorStrategy::Degree);
    let tok = Tokenization::build(&store, anchors, TokenConfig::default(), 0, 1);
    let tokens = dir.path().join("tokens.bin");
    write_token_cache(&tok, std::fs::File::create(&tokens).unwrap()).unwrap();

    let mut paths = Vec::new();
    for (repr, name) in [(EntityRepr::Direct, "direct.ckpt"), (EntityRepr::Tokens, "tokens.ckpt")] {
        let t = (repr == EntityRepr::Tokens).then_some(&tok);
        let out = train::<f32>(
            &store,
            t,
            &config(repr),
            None,
            &TrainOptions::default(),
            &mut |_| Ok(()),
        )
        .unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, out.last.to_bytes()).unwrap();
        paths.push(path);
    }
    Fixture {
        store_dir,
        direct: paths[0].clone(),
        tokens_model: paths[1].clone(),
        tokens,
        store,
        _dir: dir,
    }
}

fn open_store(path: &Path) -> *mut KgeStore {
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { kge_store_open(c(path).as_ptr(), &mut s) },
        KgeStatus::Ok,
        "{}",
        last_error()
    );
    s
}

fn open_model(path: &Path, tokens: Option<&Path>) -> *mut KgeModel {
    let mut m = ptr::null_mut();
    let tok = tokens.map(c);
    let tok_ptr = tok.as_ref().map_or(ptr::null(), |t| t.as_ptr());
    let status = unsafe { kge_model_open(c(path).as_ptr(), tok_ptr, 2, &mut m) };
    assert_eq!(status, KgeStatus::Ok, "{}", last_error());
    m
}

#[test]
fn store_from_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    std::fs::write(&train, "a\tr1\tb\nb\tr1\tc\na\tr2\tc\n").unwrap();
    let mut s = ptr::null_mut();
    let status = unsafe { kge_store_load_triples(c(&train).as_ptr(), ptr::null(), ptr::null(), false, &mut s) };
    assert_eq!(status, KgeStatus::Ok);
    unsafe {
        assert_eq!(kge_store_num_entities(s), 3);
        assert_eq!(kge_store_num_relations(s), 2);
        assert_eq!(kge_store_split_len(s, KgeSplit::Train as i32), 3);
        assert_eq!(kge_store_split_len(s, KgeSplit::Test as i32), 0);
        assert_eq!(kge_store_split_len(s, 7), 0);
        let mut id = u32::MAX;
        let label = CString::new("c").unwrap();
        assert_eq!(kge_store_entity_id(s, label.as_ptr(), &mut id), KgeStatus::Ok);
        assert_eq!(id, 2);
        let label = CString::new("r2").unwrap();
        assert_eq!(kge_store_relation_id(s, label.as_ptr(), &mut id), KgeStatus::Ok);
        assert_eq!(id, 1);
        let label = CString::new("zz").unwrap();
        assert_eq!(kge_store_entity_id(s, label.as_ptr(), &mut id), KgeStatus::OutOfRange);
        assert!(last_error().contains("zz"));
        kge_store_free(s);
    }

    std::fs::write(&train, "a\tr1\n").unwrap();
    let status = unsafe { kge_store_load_triples(c(&train).as_ptr(), ptr::null(), ptr::null(), false, &mut s) };
    assert_eq!(status, KgeStatus::Format);
    assert!(last_error().contains("line 1"), "{}", last_error());
}

#[test]
fn scores_ranks_and_metrics_match_the_library() {
    let fx = fixture();
    let s = open_store(&fx.store_dir);
    for (path, tokens) in [(&fx.direct, None), (&fx.tokens_model, Some(fx.tokens.as_path()))] {
        let m = open_model(path, tokens);
        let ck = kge_core::training::Checkpoint::<f32>::from_bytes(&std::fs::read(path).unwrap(), None).unwrap();
        let tok = tokens.map(|p| kge_core::anchors::read_token_cache(std::fs::File::open(p).unwrap()).unwrap());
        let table = ck.model.entity_table(tok.as_ref(), 1).unwrap();
        let scorer = ck.model.scorer(&table);
        unsafe {
            assert_eq!(kge_model_dim(m), 8);
            assert_eq!(kge_model_num_entities(m), 40);
            assert_eq!(kge_model_num_relations(m), 3);

            let queries = &fx.store.test[..10];
            let flat: Vec<u32> = queries.iter().flat_map(|t| [t.head, t.relation, t.tail]).collect();
            let mut batch = vec![0f32; queries.len()];
            assert_eq!(
                kge_model_score_batch(m, flat.as_ptr(), queries.len(), batch.as_mut_ptr()),
                KgeStatus::Ok
            );
            for (t, &b) in queries.iter().zip(&batch) {
                let mut one = 0f32;
                assert_eq!(kge_model_score(m, t.head, t.relation, t.tail, &mut one), KgeStatus::Ok);
                assert_eq!(one, scorer.d_r(t));
                assert_eq!(b, one);
                for (dir, code) in [
                    (Direction::Head, KgeDirection::Head),
                    (Direction::Tail, KgeDirection::Tail),
                ] {
                    let mut rank = 0.0;
                    let st = kge_model_rank(
                        m,
                        s,
                        t.head,
                        t.relation,
                        t.tail,
                        code as i32,
                        KgeTiePolicy::Mean as i32,
                        &mut rank,
                    );
                    assert_eq!(st, KgeStatus::Ok);
                    let want =
                        rank_query(&scorer, &fx.store, t, dir, Candidates::FilteredFull, TiePolicy::Mean).unwrap();
                    assert_eq!(rank, want.rank);
                }
            }

            let mut metrics = KgeMetrics::default();
            let st = kge_model_evaluate(
                m,
                s,
                KgeSplit::Test as i32,
                KgeTiePolicy::Pessimistic as i32,
                3,
                &mut metrics,
            );
            assert_eq!(st, KgeStatus::Ok, "{}", last_error());
            let opts = EvalOptions {
                tie_policy: TiePolicy::Pessimistic,
                ..Default::default()
            };
            let report = evaluate_split(&scorer, &fx.store, &fx.store.test, &opts, None).unwrap();
            assert_eq!(metrics.mrr, report.mrr);
            assert_eq!(metrics.hits_at_10, report.hits(10).unwrap());
            assert_eq!(metrics.count, 40);
            kge_model_free(m);
        }
    }
    unsafe { kge_store_free(s) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let fx = fixture();
    let s = open_store(&fx.store_dir);
    let m = open_model(&fx.direct, None);
    let mut x = 0f32;
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(kge_model_score(ptr::null(), 0, 0, 0, &mut x), KgeStatus::NullPointer);
        assert_eq!(kge_model_score(m, 0, 0, 0, ptr::null_mut()), KgeStatus::NullPointer);
        assert_eq!(kge_model_score(m, 40, 0, 0, &mut x), KgeStatus::OutOfRange);
        assert!(last_error().contains("40"));
        assert_eq!(kge_model_score(m, 0, 0, 0, &mut x), KgeStatus::Ok);
        assert_eq!(last_error(), "");

        let mut rank = 0.0;
        assert_eq!(
            kge_model_rank(m, s, 0, 0, 1, 5, 2, &mut rank),
            KgeStatus::InvalidArgument
        );
        assert_eq!(
            kge_model_rank(m, s, 0, 0, 1, 1, -1, &mut rank),
            KgeStatus::InvalidArgument
        );

        let missing = fx.store_dir.join("nope.ckpt");
        assert_eq!(
            kge_model_open(c(&missing).as_ptr(), ptr::null(), 1, &mut out),
            KgeStatus::Io
        );
        assert!(last_error().contains("nope.ckpt"));
        assert_eq!(
            kge_model_open(c(&fx.tokens_model).as_ptr(), ptr::null(), 1, &mut out),
            KgeStatus::MissingTokens
        );
        let garbage = fx.store_dir.join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        assert_eq!(
            kge_model_open(c(&garbage).as_ptr(), ptr::null(), 1, &mut out),
            KgeStatus::Format
        );
        assert!(out.is_null());

        let dir = tempfile::tempdir().unwrap();
        let other = TripleStore::new(
            Vocab::numeric(5),
            Vocab::numeric(1),
            vec![Triple::new(0, 0, 1)],
            vec![],
            vec![],
        )
        .unwrap();
        write_store_dir(&other, dir.path()).unwrap();
        let small = open_store(dir.path());
        let mut metrics = KgeMetrics::default();
        let st = kge_model_evaluate(m, small, 0, 2, 1, &mut metrics);
        assert_eq!(st, KgeStatus::DimensionMismatch);
        assert_eq!(
            kge_model_evaluate(m, small, 9, 2, 1, &mut metrics),
            KgeStatus::DimensionMismatch
        );
        assert_eq!(
            kge_model_evaluate(m, s, 9, 2, 1, &mut metrics),
            KgeStatus::InvalidArgument
        );

        kge_store_free(small);
        kge_store_free(ptr::null_mut());
        kge_model_free(ptr::null_mut());
        kge_model_free(m);
        kge_store_free(s);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kge.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    for ty in [
        "typedef struct KgeStore KgeStore",
        "typedef struct KgeModel KgeModel",
        "KGE_STATUS_OK = 0",
    ] {
        assert!(text.contains(ty), "{ty}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "kge.h"

int main(int argc, char **argv) {
    KgeStore *store = NULL;
    KgeModel *model = NULL;
    if (kge_store_open(argv[1], &store) != KGE_STATUS_OK) { fprintf(stderr, "%s\n", kge_last_error()); return 1; }
    if (kge_model_open(argv[2], NULL, 1, &model) != KGE_STATUS_OK) { fprintf(stderr, "%s\n", kge_last_error()); return 1; }
    float d = 0.0f;
    if (kge_model_score(model, 0, 0, 1, &d) != KGE_STATUS_OK) return 1;
    if (kge_model_score(model, 1000, 0, 1, &d) != KGE_STATUS_OUT_OF_RANGE) return 2;
    if (strlen(kge_last_error()) == 0) return 3;
    KgeMetrics m;
    if (kge_model_evaluate(model, store, KGE_SPLIT_TEST, KGE_TIE_POLICY_MEAN, 1, &m) != KGE_STATUS_OK) return 4;
    printf("%zu %.17g\n", m.count, m.mrr);
    kge_model_free(model);
    kge_store_free(store);
    return 0;
}
"#;

/// Locates the static library built alongside this test binary.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libkge_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not found next to the test binary; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let build = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).arg(&fx.store_dir).arg(&fx.direct).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );

    let m = open_model(&fx.direct, None);
    let s = open_store(&fx.store_dir);
    let mut metrics = KgeMetrics::default();
    assert_eq!(
        unsafe { kge_model_evaluate(m, s, 2, 2, 1, &mut metrics) },
        KgeStatus::Ok
    );
    let printed = String::from_utf8(run.stdout).unwrap();
    let mut parts = printed.split_whitespace();
    assert_eq!(parts.next().unwrap().parse::<usize>().unwrap(), metrics.count);
    assert_eq!(parts.next().unwrap().parse::<f64>().unwrap(), metrics.mrr);
    unsafe {
        kge_model_free(m);
        kge_store_free(s);
    }
}

mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use common::{data, ike, ike_raw, read_json, Recording};
use ike::corpus::{load_counterfact, load_templama, EditRecord};
use ike::demo::Kind;
use ike::lm::MockBackend;
use ike::runner::{
    read_case_lines, run_ablation, run_edit_suite, Ablation, CaseLog, ConfigPairs, Harness,
    RunConfig, TemporalRow,
};
use ike::RunError;

fn config(pairs: &[(&str, &str)], out: &Path) -> RunConfig {
    let mut p = ConfigPairs::default();
    p.set("corpus", &data("counterfact.jsonl")).unwrap();
    p.set("test_size", "25").unwrap();
    p.set("mock_rules", &data("scope_aware.rules.jsonl")).unwrap();
    p.set("out", &out.to_string_lossy()).unwrap();
    for (k, v) in pairs {
        p.set(k, v).unwrap();
    }
    RunConfig::from_pairs(&p).unwrap()
}

fn records() -> Vec<EditRecord> {
    load_counterfact(data("counterfact.jsonl"), true).unwrap().records
}

fn recording_harness(config: RunConfig, records: Vec<EditRecord>) -> (Harness, Arc<Recording<MockBackend>>) {
    let backend = Arc::new(Recording::new(
        MockBackend::from_file(data("scope_aware.rules.jsonl"), 0.01).unwrap(),
    ));
    let harness = Harness::with_records(config, records, Box::new(Arc::clone(&backend))).unwrap();
    (harness, backend)
}

#[test]
fn drop_ablations_remove_one_kind() {
    let dir = tempfile::tempdir().unwrap();
    for (name, dropped) in [("drop_copy", Kind::Copy), ("drop_update", Kind::Update), ("drop_retain", Kind::Retain)] {
        let out = dir.path().join(name);
        let outcome = run_ablation(&config(&[("k", "8"), ("ablation", name)], &out)).unwrap();
        for case in &outcome.cases {
            assert_eq!(case.kinds.len(), 8);
            assert!(!case.kinds.contains(&dropped), "{name}");
            for kind in Kind::ALL.into_iter().filter(|&k| k != dropped) {
                assert!(case.kinds.contains(&kind), "{name} keeps {kind}");
            }
        }
        assert_eq!(outcome.summary.metadata.ablation, name);
    }
}

#[test]
fn drop_retain_contexts_have_no_retain_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let (harness, backend) =
        recording_harness(config(&[("k", "8"), ("ablation", "drop_retain")], dir.path()), records());
    harness.run_edit(ike::runner::Suite::Ablation).unwrap();
    let last_word = |line: &str| line.trim_end_matches('.').rsplit(' ').next().unwrap().to_string();
    for ctx in backend.contexts.lock().unwrap().iter() {
        let blocks: Vec<&str> = ctx.split("\n\n").collect();
        for block in &blocks[..blocks.len() - 1] {
            // retain blocks answer with the original object, not the new one
            let lines: Vec<&str> = block.lines().collect();
            assert_eq!(last_word(lines[0]), last_word(lines[1]), "retain block {block:?}");
        }
    }
}

#[test]
fn ablation_requires_a_switch() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_ablation(&config(&[("k", "8")], dir.path())).unwrap_err();
    assert!(matches!(err, RunError::Config(_)));
}

#[test]
fn random_ordering_permutes_the_knn_set() {
    let dir = tempfile::tempdir().unwrap();
    let knn = run_edit_suite(&config(&[("k", "8")], &dir.path().join("a"))).unwrap();
    let shuffled = run_ablation(&config(&[("k", "8"), ("ablation", "random_ordering")], &dir.path().join("b"))).unwrap();
    let mut any_moved = false;
    for (a, b) in knn.cases.iter().zip(&shuffled.cases) {
        let ids = |c: &CaseLog| c.neighbors.iter().map(|n| n.case_id).collect::<Vec<_>>();
        let (mut x, mut y) = (ids(a), ids(b));
        any_moved |= x != y;
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }
    assert!(any_moved);
}

#[test]
fn random_selection_draws_other_records() {
    let dir = tempfile::tempdir().unwrap();
    let knn = run_edit_suite(&config(&[("k", "4")], &dir.path().join("a"))).unwrap();
    let random = run_ablation(&config(&[("k", "4"), ("ablation", "random_selection")], &dir.path().join("b"))).unwrap();
    let differs = knn
        .cases
        .iter()
        .zip(&random.cases)
        .any(|(a, b)| a.neighbors != b.neighbors);
    assert!(differs);
    for c in &random.cases {
        let mut ids: Vec<u64> = c.neighbors.iter().map(|n| n.case_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&id| id >= 25), "demonstrations come from the training split");
    }
}

#[test]
fn prompt_baseline_contexts_hold_only_the_new_fact() {
    let dir = tempfile::tempdir().unwrap();
    let (harness, backend) = recording_harness(config(&[("k", "0")], dir.path()), records());
    let outcome = harness.run_edit(ike::runner::Suite::Edit).unwrap();
    assert!(outcome.cases.iter().all(|c| c.neighbors.is_empty() && c.kinds.is_empty()));
    for ctx in backend.contexts.lock().unwrap().iter() {
        assert!(ctx.matches("New Fact: ").count() <= 1);
        assert!(!ctx.contains("\n\n"));
    }
    let m = outcome.summary.metrics.unwrap();
    assert_eq!((m.es, m.ps, m.ns), (100.0, 100.0, 100.0));
    assert_eq!(outcome.summary.metadata.ablation, "prompt_baseline");
}

#[test]
fn small_budget_drops_leftmost_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_edit_suite(&config(&[("k", "16"), ("budget", "600")], dir.path())).unwrap();
    for case in &outcome.cases {
        for p in &case.probes {
            assert!(p.demonstrations < 16, "case {}", case.case_id);
        }
    }
    let words = run_edit_suite(&config(
        &[("k", "16"), ("budget", "120"), ("length_mode", "words")],
        &dir.path().join("w"),
    ))
    .unwrap();
    assert!(words.cases.iter().all(|c| c.probes.iter().all(|p| p.demonstrations < 16)));
}

#[test]
fn invalid_test_records_are_skipped_or_fatal_in_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = records();
    recs[3].paraphrase_prompts.clear();
    let (harness, _) = recording_harness(config(&[("k", "4")], &dir.path().join("lenient")), recs.clone());
    let outcome = harness.run_edit(ike::runner::Suite::Edit).unwrap();
    assert_eq!(outcome.cases.len(), 24);
    assert_eq!(outcome.summary.metadata.skipped, 1);
    assert!(outcome.cases.iter().all(|c| c.case_id != 3));

    let (strict, _) = recording_harness(
        config(&[("k", "4"), ("strict", "true"), ("workers", "1")], &dir.path().join("strict")),
        recs,
    );
    let err = strict.run_edit(ike::runner::Suite::Edit).unwrap_err();
    assert!(matches!(err, RunError::Aborted { .. }), "{err}");
}

#[test]
fn context_dumps_are_written_per_case() {
    let dir = tempfile::tempdir().unwrap();
    run_edit_suite(&config(&[("k", "4"), ("dump_contexts", "true")], dir.path())).unwrap();
    let dumps = fs::read_dir(dir.path().join("contexts")).unwrap().count();
    assert_eq!(dumps, 25);
    let text = fs::read_to_string(dir.path().join("contexts/0.txt")).unwrap();
    assert!(text.contains("=== target: "));
    assert!(text.contains("=== pre-edit"));
}

#[test]
fn case_logs_are_sorted_and_reaggregate_to_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_edit_suite(&config(&[("k", "8"), ("workers", "8")], dir.path())).unwrap();
    let logged: Vec<CaseLog> = read_case_lines(&dir.path().join("cases.jsonl")).unwrap();
    assert_eq!(logged, outcome.cases);
    assert!(logged.windows(2).all(|w| w[0].case_id < w[1].case_id));
    let again = ike::runner::edit_metrics(&logged, ike::metrics::Pooling::Flat).unwrap();
    assert_eq!(Some(again), outcome.summary.metrics);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_edit_suite(&config(&[("k", "8"), ("workers", "1")], &dir.path().join("1"))).unwrap();
    let many = run_edit_suite(&config(&[("k", "8"), ("workers", "7")], &dir.path().join("7"))).unwrap();
    assert_eq!(one.cases, many.cases);
    assert_eq!(one.summary, many.summary);
}

#[test]
fn precomputed_embeddings_match_the_stub_source() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("emb.tsv");
    ike(&[
        "embed", "--corpus", &data("counterfact.jsonl"), "--dimension", "16", "--seed", "3",
        "--out", &table.to_string_lossy(),
    ]);
    let stub = run_edit_suite(&config(
        &[("k", "8"), ("stub_dimension", "16"), ("stub_seed", "3")],
        &dir.path().join("stub"),
    ))
    .unwrap();
    let file = run_edit_suite(&config(
        &[("k", "8"), ("embeddings", &table.to_string_lossy())],
        &dir.path().join("file"),
    ))
    .unwrap();
    assert_eq!(stub.cases, file.cases);
}

#[test]
fn conflicting_ablations_are_rejected() {
    let mut p = ConfigPairs::default();
    p.set("mock_rules", "rules.jsonl").unwrap();
    p.set("ablation", "drop_copy,random_ordering").unwrap();
    assert!(RunConfig::from_pairs(&p).is_err());
    p.set("ablation", "drop_copy").unwrap();
    let c = RunConfig::from_pairs(&p).unwrap();
    assert_eq!(c.ablation, Some(Ablation::DropCopy));
}

#[test]
fn temporal_suite_can_prepend_retrieved_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let timelines = load_templama(data("templama.jsonl"), true).unwrap().records;
    let mut p = ConfigPairs::default();
    for (k, v) in [
        ("corpus", data("counterfact.jsonl")),
        ("mock_rules", data("temporal_persistent.rules.jsonl")),
        ("test_size", "0".into()),
        ("k", "4".into()),
        ("out", dir.path().to_string_lossy().into_owned()),
    ] {
        p.set(k, &v).unwrap();
    }
    let config = RunConfig::from_pairs(&p).unwrap();
    let backend = Arc::new(Recording::new(
        MockBackend::from_file(data("temporal_persistent.rules.jsonl"), 0.01).unwrap(),
    ));
    let harness = Harness::with_records(config, records(), Box::new(Arc::clone(&backend))).unwrap();
    let outcome = harness.run_temporal(&timelines).unwrap();
    assert_eq!(outcome.cases.len(), timelines.len());
    assert_eq!(outcome.summary.temporal.unwrap().memorization_ratio, 100.0);
    for ctx in backend.contexts.lock().unwrap().iter() {
        assert_eq!(ctx.split("\n\n").count(), 5, "four demonstrations and the tail");
    }
    let rows: Vec<TemporalRow> = read_case_lines(&dir.path().join("cases.jsonl")).unwrap();
    assert!(rows.iter().all(|r| r.edits >= 3 && r.probe.starts_with("In 2010, ")));
}

#[test]
fn report_recomputes_with_another_pooling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    ike(&[
        "edit", "--corpus", &data("counterfact.jsonl"), "--test-size", "25", "--k", "8",
        "--mock-rules", &data("copier.rules.jsonl"), "--out", &out,
    ]);
    let before = read_json(dir.path().join("summary.json"));
    let stdout = ike(&["report", "--out", &out, "--pooling", "per_record"]).stdout;
    let after = read_json(dir.path().join("summary.json"));
    assert_eq!(after["metadata"]["pooling"], "per_record");
    assert_eq!(before["metrics"]["es"], after["metrics"]["es"]);
    assert!(String::from_utf8(stdout).unwrap().contains("IKE (k=8)"));
    let table = fs::read_to_string(dir.path().join("table.txt")).unwrap();
    assert!(table.starts_with("Method"));
}

#[test]
fn cli_reports_configuration_errors() {
    let out = ike_raw(&["edit", "--corpus", &data("counterfact.jsonl")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("backend"));

    let out = ike_raw(&["ablate", "--corpus", &data("counterfact.jsonl"), "--mock-rules", &data("copier.rules.jsonl")]);
    assert!(!out.status.success());

    let out = ike_raw(&["edit", "--corpus", "/nonexistent.jsonl", "--mock-rules", &data("copier.rules.jsonl")]);
    assert!(!out.status.success());
}

#[test]
fn validate_flags_bad_records_in_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(data("counterfact.jsonl")).unwrap();
    text.push_str("{\"case_id\": 99, \"subject\": \"x\"}\n");
    fs::write(&path, text).unwrap();
    let p = path.to_string_lossy();
    let lenient = ike(&["validate", "--corpus", &p]);
    assert!(String::from_utf8_lossy(&lenient.stdout).contains("1 rejected"));
    assert!(!ike_raw(&["validate", "--corpus", &p, "--strict"]).status.success());
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "corpus = {}\ntest_size = 25\nk = 4\nmock_rules = {}\n",
            data("counterfact.jsonl"),
            data("copier.rules.jsonl")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    ike(&[
        "edit", "--config", &conf.to_string_lossy(), "--k", "8",
        "--mock-rules", &data("scope_aware.rules.jsonl"), "--out", &out.to_string_lossy(),
    ]);
    let s = read_json(out.join("summary.json"));
    assert_eq!(s["metadata"]["k"], 8);
    assert_eq!(s["metrics"]["ns"], 100.0);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("k = 8\n"));
}

mod common;

use std::fs;
use std::path::Path;

use atad_core::metrics::report::{build_report, ReportInputs, REPORT_FILES};
use atad_core::pipeline::{checkpoint_dir, evaluate, generate, read_records, write_records};
use atad_core::protocol::{JsonLinesSink, NullSink};
use atad_core::store::{load_benchmark, Filter, LoadMode};
use atad_core::{DifficultyTier, RunError, TaskTypeId};

fn jsonl_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn rerun_resumes_from_checkpoints_and_rewrites_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config("gen", 4, 3, &[TaskTypeId::T1, TaskTypeId::T4], 2);
    let first = generate(&cfg, tmp.path(), &NullSink, 1).unwrap();
    let before = jsonl_bytes(&first.store_dir);
    assert!(checkpoint_dir(tmp.path(), &cfg).read_dir().unwrap().count() >= 6);

    let sink = JsonLinesSink::new(Vec::new());
    let second = generate(&cfg, tmp.path(), &sink, 2).unwrap();
    assert_eq!(jsonl_bytes(&second.store_dir), before);
    assert_eq!(second.stats, first.stats);
    let events = String::from_utf8(sink.into_inner()).unwrap();
    assert!(events.lines().last().unwrap().contains("campaign_finished"));
}

#[test]
fn seed_changes_content() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = generate(&common::scripted_config("gen", 1, 2, &[TaskTypeId::T2], 1), a.path(), &NullSink, 0).unwrap();
    let sb = generate(&common::scripted_config("gen", 2, 2, &[TaskTypeId::T2], 1), b.path(), &NullSink, 0).unwrap();
    assert_ne!(jsonl_bytes(&sa.store_dir), jsonl_bytes(&sb.store_dir));
}

#[test]
fn generated_store_passes_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config("gen", 8, 4, &TaskTypeId::ALL, 4);
    let s = generate(&cfg, tmp.path(), &NullSink, 0).unwrap();
    let loaded = load_benchmark(&s.store_dir, &Filter::default(), LoadMode::Strict).unwrap();
    assert_eq!(loaded.set.len(), s.items);
    assert_eq!(loaded.trajectories.len(), 28);
    for t in &loaded.trajectories {
        t.check_invariants().unwrap();
    }
    assert_eq!(loaded.set.items.iter().filter(|i| i.item.is_final).count(), 28);
    assert!(loaded.set.items.iter().all(|i| i.generator_family == "Scripted"));
}

#[test]
fn evaluation_is_deterministic_and_reports_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config("gen", 12, 4, &TaskTypeId::ALL, 4);
    generate(&cfg, tmp.path(), &NullSink, 0).unwrap();
    let a = evaluate(&cfg, tmp.path(), &Filter::default(), 1).unwrap();
    let b = evaluate(&cfg, tmp.path(), &Filter::default(), 8).unwrap();
    assert_eq!(a, b);

    let path = tmp.path().join("eval/records.jsonl");
    write_records(&path, &a).unwrap();
    assert_eq!(read_records(&path).unwrap(), a);
    assert_eq!(read_records(&tmp.path().join("eval")).unwrap(), a);

    let report = build_report(&ReportInputs { records: a, ..Default::default() }).unwrap();
    let (d1, d2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    report.write(&d1).unwrap();
    report.write(&d2).unwrap();
    for f in REPORT_FILES {
        assert_eq!(fs::read(d1.join(f)).unwrap(), fs::read(d2.join(f)).unwrap(), "{f}");
    }
    assert_eq!(report.accuracy_by_task.models, vec!["eval-a", "eval-b"]);
    assert!(report.delta.is_some());
}

#[test]
fn easy_filter_evaluates_base_items_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config("gen", 5, 3, &TaskTypeId::ALL, 2);
    generate(&cfg, tmp.path(), &NullSink, 0).unwrap();
    let filter = Filter { tiers: Some(vec![DifficultyTier::Easy]), ..Default::default() };
    let records = evaluate(&cfg, tmp.path(), &filter, 2).unwrap();
    assert_eq!(records.len(), 2 * 21);
    assert!(records.iter().all(|r| r.tier == Some(DifficultyTier::Easy) && r.in_base()));
}

#[test]
fn final_only_skips_intermediate_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::scripted_config("gen", 5, 3, &TaskTypeId::ALL, 2);
    cfg.evaluation.final_only = true;
    generate(&cfg, tmp.path(), &NullSink, 0).unwrap();
    let records = evaluate(&cfg, tmp.path(), &Filter::default(), 2).unwrap();
    assert_eq!(records.len(), 2 * 21);
    assert!(records.iter().all(|r| r.is_final));
}

#[test]
fn empty_store_yields_no_records() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("gen")).unwrap();
    let cfg = common::scripted_config("gen", 5, 3, &TaskTypeId::ALL, 2);
    assert!(matches!(evaluate(&cfg, tmp.path(), &Filter::default(), 1), Err(RunError::NoRecords)));
}

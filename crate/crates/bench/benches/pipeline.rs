use std::hint::black_box;

use atad_bench::scripted_campaign;
use atad_core::agent::{parse_problem, render_problem_json, ParseTarget};
use atad_core::metrics::fixtures::{fixture_dir, report_inputs};
use atad_core::metrics::report::build_report;
use atad_core::pipeline::{evaluate, generate};
use atad_core::protocol::NullSink;
use atad_core::store::{load_benchmark, Filter, LoadMode};
use atad_core::TaskTypeId;
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

fn campaign(c: &mut Criterion) {
    let mut g = c.benchmark_group("campaign");
    g.sample_size(10);
    for conc in [1usize, 4] {
        g.bench_with_input(BenchmarkId::new("all_tasks_x4", conc), &conc, |b, &conc| {
            let cfg = scripted_campaign(11, 4, &TaskTypeId::ALL, conc);
            b.iter_batched(
                || tempfile::tempdir().unwrap(),
                |dir| generate(&cfg, dir.path(), &NullSink, 0).unwrap(),
                BatchSize::PerIteration,
            );
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let cfg = scripted_campaign(11, 8, &TaskTypeId::ALL, 4);
    let dir = tempfile::tempdir().unwrap();
    generate(&cfg, dir.path(), &NullSink, 0).unwrap();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(20);
    g.bench_function("two_models", |b| b.iter(|| evaluate(&cfg, dir.path(), &Filter::default(), 4).unwrap()));
    g.finish();
}

fn report(c: &mut Criterion) {
    let inputs = report_inputs(&fixture_dir()).unwrap();
    c.bench_function("fixture_report", |b| b.iter(|| build_report(black_box(&inputs)).unwrap()));
}

fn parse(c: &mut Criterion) {
    let cfg = scripted_campaign(3, 2, &TaskTypeId::ALL, 1);
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&cfg, dir.path(), &NullSink, 0).unwrap();
    let set = load_benchmark(&s.store_dir, &Filter::default(), LoadMode::Strict).unwrap().set;
    let cases: Vec<_> = set
        .items
        .iter()
        .map(|i| {
            let inst = &i.item.instance;
            let target = ParseTarget {
                task: inst.task,
                lineage_id: inst.lineage_id.clone(),
                instance_id: inst.instance_id.clone(),
                tier: inst.tier(),
            };
            (format!("Here is the problem:\n{}\nDone.", render_problem_json(inst)), target)
        })
        .collect();
    c.bench_function("parse_problem", |b| {
        b.iter(|| {
            for (text, target) in &cases {
                black_box(parse_problem(text, target).unwrap());
            }
        })
    });
}

criterion_group!(benches, campaign, evaluation, report, parse);
criterion_main!(benches);

//! Benchmarks for the hot paths: the graded abstraction pipeline, full
//! per-patient analysis, library validation, and CSV ingest.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use critiq_bench::{bench_cohort, wide_library};
use critiq_core::engine::{analyze_patient, EngineConfig, PreparedKnowledge};
use critiq_core::fuzzy::evaluate_concept;
use critiq_core::ingest::{ingest_patient_records, load_mapping};
use critiq_core::knowledge::validate::validate_library;
use critiq_core::synth::taxonomy_fixture_library;

fn pipeline(c: &mut Criterion) {
    let cohort = bench_cohort(1);
    let lib = taxonomy_fixture_library();
    let record = &cohort.records[0];
    c.bench_function("evaluate_concept/diabetes-active/one-patient", |b| {
        let window = critiq_core::fuzzy::default_analysis_window(&lib, record).unwrap();
        b.iter(|| evaluate_concept(&lib, "diabetes-active", record, window).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let cohort = bench_cohort(9);
    let prepared = PreparedKnowledge::prepare(cohort.library.clone());
    let config = EngineConfig::default();
    let mut group = c.benchmark_group("analyze_patient");
    for (i, label) in [(0usize, "clean"), (1, "missing-action"), (8, "wrong-path")] {
        let record = &cohort.records[i];
        group.bench_with_input(BenchmarkId::from_parameter(label), record, |b, record| {
            b.iter(|| analyze_patient(&prepared, &config, record, None).unwrap())
        });
    }
    group.finish();
}

fn validation(c: &mut Criterion) {
    let mut group = c.benchmark_group("validate_library");
    for groups in [10usize, 100, 500] {
        let lib = wide_library(groups);
        group.bench_with_input(BenchmarkId::from_parameter(groups), &lib, |b, lib| {
            b.iter(|| {
                let report = validate_library(lib);
                assert!(!report.has_errors());
                report
            })
        });
    }
    group.finish();
}

fn ingest(c: &mut Criterion) {
    let cohort = bench_cohort(50);
    let lib = taxonomy_fixture_library();
    let mapping = load_mapping(cohort.mapping_csv.as_bytes(), &lib).unwrap();
    c.bench_function("ingest/50-patient-cohort", |b| {
        b.iter(|| ingest_patient_records(cohort.data_csv.as_bytes(), &mapping, &lib).unwrap())
    });
}

criterion_group!(benches, pipeline, analysis, validation, ingest);
criterion_main!(benches);

//! Hot paths of the assignment-inference pipeline: smoothing/decoding one
//! sequence, one covariate-dependent transition-matrix build, the initial
//! zone assignment, Monte Carlo ghost sampling, and a full EM iteration.

use cdhmm_core::assignment::min_cost_assignment;
use cdhmm_core::covariates::build_covariates;
use cdhmm_core::ghosting::sample_ghost;
use cdhmm_core::model::transition_log_matrix;
use cdhmm_core::synthgen::{generate_dataset, standard_scenario};
use cdhmm_core::tracking::{DeliveryType, SquadCountMode};
use cdhmm_core::training::em_fit;
use cdhmm_core::{
    decode_sequence, AssignmentMetric, CdhmmParams, EmConfig, SequenceView, TrainingSet,
};
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use std::hint::black_box;

fn fixture(k: usize, frames: usize, sequences: usize) -> (CdhmmParams, Vec<SequenceView>) {
    let spec =
        standard_scenario("BEN", DeliveryType::Inswing, k, frames, sequences, 11, 0.75, 0.25)
            .unwrap();
    let data = generate_dataset(&spec).unwrap();
    let views = data
        .dataset
        .sequences
        .iter()
        .map(|s| SequenceView::build(s).unwrap())
        .collect();
    (spec.truth, views)
}

fn bench_decode(c: &mut Criterion) {
    let (params, views) = fixture(10, 75, 1);
    c.bench_function("decode_sequence_k10_t75", |b| {
        b.iter(|| {
            decode_sequence(black_box(&params), black_box(&views[0]), AssignmentMetric::Euclidean)
                .unwrap()
        })
    });
}

fn bench_transitions(c: &mut Criterion) {
    let (params, views) = fixture(10, 75, 1);
    let zone = params.zones[0].zone_ref();
    let mut cov = build_covariates(&views[0], 0, 0, &zone);
    params.standardizer.apply_frame(&mut cov);
    let n = params.attacker_count() + 1;
    let mut out = Array2::zeros((n, n));
    c.bench_function("transition_log_matrix_n11", |b| {
        b.iter(|| transition_log_matrix(black_box(&params.beta), black_box(&cov), &mut out))
    });
}

fn bench_assignment(c: &mut Criterion) {
    let cost = Array2::from_shape_fn((10, 10), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 7.0);
    c.bench_function("min_cost_assignment_10x10", |b| {
        b.iter(|| min_cost_assignment(black_box(&cost)).unwrap())
    });
}

fn bench_ghost_sampling(c: &mut Criterion) {
    let (params, views) = fixture(10, 75, 1);
    c.bench_function("sample_ghost_512", |b| {
        b.iter(|| sample_ghost(black_box(&params), &views[0], 40, 3, 2, 512, 9).unwrap())
    });
}

fn bench_em_iteration(c: &mut Criterion) {
    let spec = standard_scenario("BEN", DeliveryType::Inswing, 5, 40, 10, 11, 0.75, 0.25).unwrap();
    let data = generate_dataset(&spec).unwrap();
    let set = TrainingSet::from_dataset(
        &data.dataset,
        "BEN",
        DeliveryType::Inswing,
        SquadCountMode::Permissive,
    )
    .unwrap();
    let config = EmConfig { iterations: 1, batch_size: 1, ..EmConfig::default() };
    let mut group = c.benchmark_group("em");
    group.sample_size(10);
    group.bench_function("em_iteration_k5_t40_s10", |b| {
        b.iter(|| em_fit(black_box(&set), &config, 0).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_decode,
    bench_transitions,
    bench_assignment,
    bench_ghost_sampling,
    bench_em_iteration
);
criterion_main!(benches);

//! Seed sweeps and active-set enumeration through `par::map` against a
//! plain sequential loop over the same work.
//!
//! Run with the default features for the rayon path, or with
//! `--no-default-features` to time the sequential fallback under both
//! labels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use piflow::oracle::active_set_qp;
use piflow::problems::random_qp;
use piflow::{par, run, FlowKind, GainConfig, RunOptions};

fn solve_seed(seed: u64) -> usize {
    let p = random_qp(12, 8, seed).unwrap();
    let gains = GainConfig {
        t_final: 10.0,
        ..GainConfig::default()
    };
    let r = run(&p, &gains, FlowKind::Pi, &DVector::zeros(12), &DVector::zeros(8), &RunOptions::default()).unwrap();
    r.trace.accepted_steps
}

fn seed_sweep(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("seed_sweep");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("par", seeds.len()), |b| {
        b.iter(|| par::map(black_box(&seeds), |&s| solve_seed(s)))
    });
    g.bench_function(BenchmarkId::new("seq", seeds.len()), |b| {
        b.iter(|| black_box(&seeds).iter().map(|&s| solve_seed(s)).collect::<Vec<_>>())
    });
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let problems: Vec<_> = (0..8).map(|s| random_qp(10, 10, 100 + s).unwrap()).collect();
    let mut g = c.benchmark_group("enumeration");
    g.sample_size(10);
    g.bench_function("par", |b| b.iter(|| par::map(black_box(&problems), |p| active_set_qp(p, 12).is_ok())));
    g.bench_function("seq", |b| {
        b.iter(|| black_box(&problems).iter().map(|p| active_set_qp(p, 12).is_ok()).collect::<Vec<_>>())
    });
    g.finish();
}

criterion_group!(benches, seed_sweep, enumeration);
criterion_main!(benches);

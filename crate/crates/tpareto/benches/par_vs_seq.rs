//! Data-parallel vs sequential throughput for the generator, the
//! Monte-Carlo oracle, and batched min-norm solves.
//!
//! With the default `parallel` feature the parallel functions run on
//! rayon; building with `--no-default-features` turns them into their
//! sequential equivalents, so the same bench measures the fallback.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use tpareto::pareto::{frank_wolfe_minnorm, ParetoProblem, SolverConfig};
use tpareto::synth::{bayes_oracle, generate, generate_sequential, GenConfig};
use tpareto::tensor::{GradientVector, GroupId};

fn bench_cfg(n: usize) -> GenConfig {
    GenConfig {
        n_samples: n,
        seed: 7,
        dim: 32,
        conflict_rate: 0.3,
        ..GenConfig::default()
    }
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    for n in [512usize, 2048] {
        let cfg = bench_cfg(n);
        group.bench_function(format!("parallel/{n}"), |b| {
            b.iter(|| black_box(generate(black_box(&cfg)).unwrap()))
        });
        group.bench_function(format!("sequential/{n}"), |b| {
            b.iter(|| black_box(generate_sequential(black_box(&cfg)).unwrap()))
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let cfg = bench_cfg(64);
    let mut group = c.benchmark_group("bayes_oracle");
    group.sample_size(20);
    for n_mc in [10_000usize, 50_000] {
        group.bench_function(format!("mc/{n_mc}"), |b| {
            b.iter(|| black_box(bayes_oracle(black_box(&cfg), n_mc).unwrap()))
        });
    }
    group.finish();
}

fn minnorm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problems: Vec<ParetoProblem> = (0..256)
        .map(|_| {
            let grads = (0..3)
                .map(|_| GradientVector {
                    group: GroupId::Theta1,
                    values: (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            ParetoProblem::new(grads).unwrap()
        })
        .collect();
    let cfg = SolverConfig::default();
    c.bench_function("minnorm/256x(T=3,dim=64)", |b| {
        b.iter(|| {
            for p in &problems {
                black_box(frank_wolfe_minnorm(black_box(p), &cfg).unwrap());
            }
        })
    });
}

criterion_group!(benches, generation, oracle, minnorm);
criterion_main!(benches);

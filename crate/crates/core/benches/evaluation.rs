//! Sequential versus data-parallel evaluation. `jobs=1` pins the work to a
//! single-thread pool; `jobs=all` uses the default rayon pool. Built without
//! the `parallel` feature both variants run the sequential loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylo::analysis::{stability_selection, StabilityConfig};
use stylo::corpus::Label;
use stylo::evaluation::{loo_eval, nested_eval, CVConfig};
use stylo::features::FeatureMatrix;
use stylo::par;

fn noise_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| if rng.gen_bool(0.05) { f64::from(rng.gen_range(1..4u8)) } else { 0.0 })
                .collect()
        })
        .collect();
    let labels = (0..n).map(|i| Label::from(i % 2 == 0)).collect();
    FeatureMatrix::from_dense(&rows, labels).unwrap()
}

const MODES: [(&str, Option<usize>); 2] = [("jobs=1", Some(1)), ("jobs=all", None)];

fn bench_cv(c: &mut Criterion) {
    let x = noise_matrix(40, 300, 1);
    let cfg = CVConfig {
        trials: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("cross_validation");
    group.sample_size(10);
    for (label, jobs) in MODES {
        group.bench_with_input(BenchmarkId::new("loo", label), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || loo_eval(&x, &cfg).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("nested", label), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || nested_eval(&x, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_stability(c: &mut Criterion) {
    let x = noise_matrix(60, 200, 2);
    let cfg = StabilityConfig {
        resamples: 50,
        ..Default::default()
    };
    let mut group = c.benchmark_group("stability_selection");
    group.sample_size(10);
    for (label, jobs) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || stability_selection(&x, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_cv, bench_stability);
criterion_main!(benches);

//! Compares the data-parallel execution path against sequential execution on
//! the two workloads that dominate real use: simulating a trial and fitting
//! the estimator.
//!
//! With the `parallel` feature enabled (the default), each workload is timed
//! twice: once on the process-wide rayon pool and once inside a dedicated
//! one-thread pool, which forces the same chunked code to run sequentially.
//! Both paths produce byte-identical results by construction, so the bench
//! measures pure scheduling overhead or speedup. With the feature disabled
//! (`--no-default-features`) only the plain sequential path exists and a
//! single set of measurements is produced.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dcee::estimator::{estimate_dcee, EstimateOptions};
use dcee::features::EstimandSpec;
use dcee::nuisance::LearnerSpec;
use dcee::simulator::{default_sim_params, simulate_dataset, PolicySpec};

const N_PERSONS: usize = 2_000;
const SEED: u64 = 401;

fn simulate_workload() -> usize {
    let params = default_sim_params();
    let ds = simulate_dataset(&params, N_PERSONS, SEED, PolicySpec::Mrt)
        .expect("simulation with default parameters succeeds");
    ds.n()
}

fn estimate_workload(ds: &dcee::data::MrtDataset) -> f64 {
    let estimand = EstimandSpec::moderated_by("Z");
    let learner = LearnerSpec::linear();
    let opts = EstimateOptions {
        crossfit_k: 0,
        ..EstimateOptions::default()
    };
    let fit = estimate_dcee(ds, &estimand, &learner, &opts).expect("estimation succeeds");
    fit.beta[0]
}

fn bench_simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);

    group.bench_function(BenchmarkId::new("default_pool", N_PERSONS), |b| {
        b.iter(|| black_box(simulate_workload()))
    });

    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("one-thread pool builds");
        group.bench_function(BenchmarkId::new("one_thread_pool", N_PERSONS), |b| {
            b.iter(|| pool.install(|| black_box(simulate_workload())))
        });
    }

    group.finish();
}

fn bench_estimate(c: &mut Criterion) {
    let params = default_sim_params();
    let ds = simulate_dataset(&params, N_PERSONS, SEED, PolicySpec::Mrt)
        .expect("simulation with default parameters succeeds");

    let mut group = c.benchmark_group("estimate");
    group.sample_size(20);

    group.bench_function(BenchmarkId::new("default_pool", N_PERSONS), |b| {
        b.iter(|| black_box(estimate_workload(&ds)))
    });

    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("one-thread pool builds");
        group.bench_function(BenchmarkId::new("one_thread_pool", N_PERSONS), |b| {
            b.iter(|| pool.install(|| black_box(estimate_workload(&ds))))
        });
    }

    group.finish();
}

criterion_group!(benches, bench_simulate, bench_estimate);
criterion_main!(benches);

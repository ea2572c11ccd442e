//! Data-parallel kernels against their single-threaded runs.
//!
//! Each group times the same call inside a one-thread pool (`sequential`)
//! and on the global pool (`parallel`). Building with
//! `--no-default-features` replaces both with the plain iterator fallback.
//!
//! ```bash
//! cargo bench -p spinsqueeze --bench parallel
//! cargo bench -p spinsqueeze --bench parallel -- exact_error
//! ```

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spinsqueeze::estimator::{error_exact, estimate, EstimatorMode, ProtocolDesign};
use spinsqueeze::par::with_threads;
use spinsqueeze::robustness::{number_fluctuation_xi2, NumberDistribution, NumberKind};
use spinsqueeze::schedule::{build_schedule, ScheduleContext};

const MODES: [(&str, Option<usize>); 2] = [("sequential", Some(1)), ("parallel", None)];

fn exact_error(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_error");
    group.measurement_time(Duration::from_secs(10));
    for n in [1000, 4000] {
        let p = ProtocolDesign::adaptive(n, 3).unwrap().build(0.1).unwrap();
        for (label, threads) in MODES {
            group.bench_with_input(BenchmarkId::new(label, n), &p, |b, p| {
                b.iter(|| with_threads(threads, || black_box(error_exact(p).unwrap().delta_phi2)))
            });
        }
    }
    group.finish();
}

fn monte_carlo_error(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo_error");
    group.sample_size(20);
    let p = ProtocolDesign::adaptive(4000, 4)
        .unwrap()
        .build(0.3)
        .unwrap()
        .with_mode(EstimatorMode::MonteCarlo {
            samples: 10,
            seed: 1,
            gaussian_from: None,
        });
    for (label, threads) in MODES {
        group.bench_function(label, |b| {
            b.iter(|| with_threads(threads, || black_box(estimate(&p).unwrap().delta_phi2)))
        });
    }
    group.finish();
}

fn number_fluctuations(c: &mut Criterion) {
    let mut group = c.benchmark_group("number_fluctuations");
    group.sample_size(10);
    let dist = NumberDistribution::new(NumberKind::Poisson, 2000).unwrap();
    let build = |n| build_schedule(n, 2, 0.7, ScheduleContext::Standalone);
    for (label, threads) in MODES {
        group.bench_function(label, |b| {
            b.iter(|| with_threads(threads, || black_box(number_fluctuation_xi2(&dist, build, 64, 3).unwrap().mean)))
        });
    }
    group.finish();
}

criterion_group!(benches, exact_error, monte_carlo_error, number_fluctuations);
criterion_main!(benches);

//! Data-parallel kernels vs sequential execution.
//!
//! With the default `parallel` feature each workload runs in rayon pools of
//! 1 and N threads; building with `--no-default-features` benches the plain
//! sequential fallback for comparison:
//!
//! ```text
//! cargo bench -p owl-core
//! cargo bench -p owl-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion};

use owl_core::evaluate::{
    grid_search, KernelFamily, LossFamily, MethodSpec, ObjectivePath, TuneCriterion, TuningGrid,
};
use owl_core::losses::LossSpec;
use owl_core::simgen::{self, ScenarioSpec};
use owl_core::{calibration, kernels, KernelSpec};

fn run_in_pool<T>(threads: usize, f: impl Fn() -> T) -> T {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool")
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

fn thread_counts() -> Vec<(String, usize)> {
    #[cfg(feature = "parallel")]
    {
        let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
        let mut counts = vec![("threads_1".to_string(), 1)];
        if max > 1 {
            counts.push((format!("threads_{max}"), max));
        }
        counts
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential".to_string(), 1)]
    }
}

fn scenario(n: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec { example_id: 2, smooth: true, n, m: 5, contamination_rate: 0.0, seed }
}

fn bench_gram(c: &mut Criterion) {
    let data = simgen::generate(&scenario(512, 5)).unwrap();
    let kernel = KernelSpec::matern(1.5, 0.5).unwrap();
    let mut group = c.benchmark_group("gram_matrix_n512");
    for (name, threads) in thread_counts() {
        group.bench_function(&name, |b| {
            b.iter(|| {
                run_in_pool(threads, || kernels::gram_matrix(&kernel, data.covariates()).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_psi_curve(c: &mut Criterion) {
    let loss = LossSpec::binomial();
    let mut group = c.benchmark_group("psi_curve_129");
    group.sample_size(10);
    for (name, threads) in thread_counts() {
        group.bench_function(&name, |b| {
            b.iter(|| run_in_pool(threads, || calibration::psi_curve(&loss, 1.0, 129).unwrap()))
        });
    }
    group.finish();
}

fn bench_grid_search(c: &mut Criterion) {
    let train = simgen::generate(&scenario(100, 7)).unwrap();
    let tune = simgen::generate(&scenario(100, 8)).unwrap();
    let method = MethodSpec {
        name: "bench".into(),
        objective: ObjectivePath::Rwl,
        loss: LossFamily::Convex(LossSpec::binomial()),
        kernel: KernelFamily::Matern { alpha: 0.5 },
        criterion: TuneCriterion::MaximizeValue,
    };
    let grid = TuningGrid {
        lambdas: vec![0.1, 1.0, 10.0],
        bandwidths: vec![0.3, 1.0, 3.0],
        sigmas: None,
    };
    let mut group = c.benchmark_group("grid_search_9_cells");
    group.sample_size(10);
    for (name, threads) in thread_counts() {
        group.bench_function(&name, |b| {
            b.iter(|| {
                run_in_pool(threads, || grid_search(&train, &tune, &method, &grid, None).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gram, bench_psi_curve, bench_grid_search);
criterion_main!(benches);

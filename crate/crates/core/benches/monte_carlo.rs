use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mimo_ee::harness::{monte_carlo, Execution};
use mimo_ee::SystemConfig;

fn bench_execution(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (label, rf) in [("rf0.3", 0.3), ("rf3", 3.0)] {
        let config = SystemConfig {
            rf_var_rx: rf,
            rf_var_tx: rf,
            ..Default::default()
        };
        for execution in [Execution::Sequential, Execution::Parallel] {
            let id = BenchmarkId::new(format!("{execution:?}").to_lowercase(), label);
            group.bench_with_input(id, &config, |b, config| {
                b.iter(|| monte_carlo(black_box(config), 64, 1, execution).expect("trials run"));
            });
        }
    }
    group.finish();
}

fn bench_single_solve(c: &mut Criterion) {
    let config = SystemConfig::default();
    c.bench_function("run_trial", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            mimo_ee::run_trial(black_box(&config), seed)
        });
    });
}

criterion_group!(benches, bench_execution, bench_single_solve);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rsfilt::sim::{simulate, ExperimentConfig, FilterChoice};
use rsfilt::{Execution, GaussianModel, RiskSpec};

fn config(horizon: usize, n_paths: usize, execution: Execution) -> ExperimentConfig {
    ExperimentConfig {
        model: GaussianModel::ar1(&vec![0.9; horizon], &vec![1.0; horizon], 0.0, &vec![1.0; horizon]).unwrap(),
        risk: RiskSpec::scalar(-1.0, vec![1.0; horizon]).unwrap(),
        filter: FilterChoice::Leg,
        n_paths,
        seed: 7,
        execution,
    }
}

fn risk_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for &horizon in &[10usize, 50] {
        let n_paths = 50_000;
        group.throughput(Throughput::Elements(n_paths as u64));
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let cfg = config(horizon, n_paths, execution);
            group.bench_with_input(BenchmarkId::new(label, horizon), &cfg, |b, cfg| {
                b.iter(|| simulate(cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, risk_estimate);
criterion_main!(benches);

//! Replicate throughput of the simulation grid, data-parallel against
//! sequential. Without the `parallel` feature both rows run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eqps::comparators::{AnalysisConfig, Method};
use eqps::exec::Execution;
use eqps::hierarchy::McmcConfig;
use eqps::simulation::{run_grid, GridConfig};
use std::hint::black_box;

fn small_grid(methods: Vec<Method>, replicates: usize) -> GridConfig {
    let mut analysis = AnalysisConfig {
        mcmc: McmcConfig {
            chains: 2,
            iterations: 800,
            burn_in: 300,
            ..McmcConfig::desk()
        },
        ..AnalysisConfig::default()
    };
    analysis.eqps.draws = 5_000;
    GridConfig {
        baseline_shifts: vec![0.0],
        heterogeneity: vec![0.2],
        lambdas: vec![0.8],
        deltas: vec![0.1],
        methods,
        replicates,
        analysis,
        true_effect_draws: 2_000,
        ..GridConfig::default()
    }
}

fn replicates(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    let cases = [
        ("noborrow", small_grid(vec![Method::NoBorrow], 200)),
        ("eqps", small_grid(vec![Method::Eqps], 4)),
    ];
    for (name, grid) in &cases {
        for (mode, exec) in [
            ("parallel", Execution::Parallel),
            ("sequential", Execution::Sequential),
        ] {
            group.bench_with_input(BenchmarkId::new(*name, mode), grid, |b, g| {
                b.iter(|| black_box(run_grid(g, exec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replicates);
criterion_main!(benches);

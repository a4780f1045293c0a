use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prosac_bench::{bump_oracle, square_grid};
use prosac_core::gp_ucb::ucb_run;
use prosac_core::hb_stats::{binom_tail, p_value};
use prosac_core::{grid_certify, EvalSeed, SafetySpec, UcbConfig};

fn stats(c: &mut Criterion) {
    c.bench_function("p_value n=1000", |b| {
        b.iter(|| p_value(black_box(0.05), 1000, 0.1))
    });
    c.bench_function("binom_tail n=1e5", |b| {
        b.iter(|| binom_tail(black_box(9_500), 100_000, 0.1))
    });
}

fn search(c: &mut Criterion) {
    let mut group = c.benchmark_group("ucb_run");
    for side in [5usize, 10, 20] {
        let grid = square_grid(side);
        let truth: Vec<f64> = (0..grid.len())
            .map(|i| (i as f64 * 0.37).sin().abs() * 0.1)
            .collect();
        let cfg = UcbConfig {
            rounds: 50,
            ..UcbConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(side * side), &grid, |b, g| {
            b.iter(|| ucb_run::<(), _>(g, &cfg, |_, i, _| Ok(truth[i])).expect("search runs"))
        });
    }
    group.finish();
}

fn exhaustive(c: &mut Criterion) {
    let grid = square_grid(20);
    let oracle = bump_oracle(&grid, 1000);
    let spec = SafetySpec::default();
    c.bench_function("grid_certify 400 points", |b| {
        b.iter(|| {
            grid_certify(&oracle, &grid, &spec, EvalSeed::Run(7), Some(1)).expect("certifies")
        })
    });
}

criterion_group!(benches, stats, search, exhaustive);
criterion_main!(benches);

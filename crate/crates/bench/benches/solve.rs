use std::hint::black_box;

use blockrar::{solve, SolverConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn solve_sizes(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for n in [20u32, 30, 46] {
        let cfg = SolverConfig::new(n, 4.0, 0.01);
        group.bench_function(format!("n{n}"), |b| b.iter(|| solve(black_box(&cfg)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, solve_sizes);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use throughputlab::sim::{build_mcs_program, sweep, sweep_sequential, SimConfig};
use throughputlab::CostModel;

fn model() -> CostModel {
    CostModel {
        alpha: 1.0,
        w: 10,
        r_i: 50,
        m: 5,
        x: 0,
    }
}

fn sweeps(c: &mut Criterion) {
    let m = model();
    let ns = [2, 4, 8, 15];
    let ps: Vec<u64> = (0..8).map(|i| i * 400).collect();
    let cs = [100];
    let mut group = c.benchmark_group("mcs_sweep");
    group.sample_size(10);
    for horizon in [20_000u64, 100_000] {
        let base = SimConfig::new(1, horizon);
        group.bench_with_input(BenchmarkId::new("sequential", horizon), &base, |b, base| {
            b.iter(|| sweep_sequential(build_mcs_program, &m, &ns, &ps, &cs, black_box(base)).unwrap())
        });
        // rayon when the `parallel` feature is on, which it is by default
        group.bench_with_input(BenchmarkId::new("default", horizon), &base, |b, base| {
            b.iter(|| sweep(build_mcs_program, &m, &ns, &ps, &cs, black_box(base)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);

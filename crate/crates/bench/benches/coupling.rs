use std::hint::black_box;

use brw_bench::ball_walk;
use brw_core::coupling::run_coupled_spaces;
use brw_core::kernel::{min_resolution_supercritical, DiscretizeOptions};
use criterion::{criterion_group, criterion_main, Criterion};

fn coupled_pair(c: &mut Criterion) {
    let mut p = ball_walk(5.0, 10.0, 300);
    let grid = min_resolution_supercritical(&p.kernel, &p.domain, 5.0, 16, &DiscretizeOptions::default()).unwrap();
    c.bench_function("coupling/pair_to_300", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            p.seed = seed;
            black_box(run_coupled_spaces(&p, &grid).unwrap())
        })
    });
}

criterion_group!(benches, coupled_pair);
criterion_main!(benches);

use std::hint::black_box;

use brw_core::percolation::percolate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn heights(c: &mut Criterion) {
    let mut g = c.benchmark_group("percolation");
    for (p, h) in [(0.8, 100u32), (0.8, 400), (0.65, 400)] {
        g.bench_with_input(BenchmarkId::new(format!("p{p}"), h), &h, |b, &h| {
            let mut seed = 0;
            b.iter(|| {
                seed += 1;
                black_box(percolate(p, h, seed).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, heights);
criterion_main!(benches);

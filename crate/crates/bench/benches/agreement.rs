use cgt_bench::rating_counts;
use cgt_core::annotation::fleiss_kappa;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn kappa(c: &mut Criterion) {
    let counts = rating_counts(76, 3, 3, 5);
    c.bench_function("fleiss kappa 76x3", |b| b.iter(|| fleiss_kappa(black_box(&counts)).unwrap()));
}

criterion_group!(benches, kappa);
criterion_main!(benches);

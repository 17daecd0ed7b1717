use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use pcs_bench::gaussian_problem;
use pcs_core::dfdl::sparse_code_omp;

fn omp(c: &mut Criterion) {
    let (_, dict) = gaussian_problem(256, 64, 2, 1);
    let (_, samples) = gaussian_problem(256, 200, 2, 2);
    let y: DMatrix<f64> = samples.atoms().clone();
    let mut group = c.benchmark_group("omp_200_samples");
    for l in [1, 4, 8] {
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, &l| {
            b.iter(|| sparse_code_omp(black_box(&y), dict.atoms(), l).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, omp);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mar_bench::metal_problem;
use mar_core::diffops::{divergence_into, gradient_into};
use mar_core::{Geometry, ImageShape, RadonOperator, VectorField};
use ndarray::Array2;

fn projector(c: &mut Criterion) {
    let mut group = c.benchmark_group("radon");
    for n in [64, 128] {
        let (gt, sino, _, _) = metal_problem(n);
        let op = RadonOperator::new(Geometry::default_for(gt.shape()), gt.shape()).unwrap();
        let mut out = Array2::zeros(sino.values().dim());
        group.bench_with_input(BenchmarkId::new("project", n), &n, |b, _| {
            b.iter(|| op.forward_into(gt.values().view(), out.view_mut()))
        });
        let mut back = Array2::zeros((n, n));
        group.bench_with_input(BenchmarkId::new("backproject", n), &n, |b, _| {
            b.iter(|| op.adjoint_into(sino.values().view(), back.view_mut()))
        });
    }
    group.finish();
}

fn differences(c: &mut Criterion) {
    let n = 128;
    let shape = ImageShape::square(n).unwrap();
    let (gt, _, _, _) = metal_problem(n);
    let mut field = VectorField::zeros(shape.rows, shape.cols);
    let mut div = Array2::zeros((n, n));
    c.bench_function("gradient_divergence/128", |b| {
        b.iter(|| {
            gradient_into(gt.values().view(), 1.0, &mut field);
            divergence_into(&field, 1.0, div.view_mut());
        })
    });
}

criterion_group!(benches, projector, differences);
criterion_main!(benches);

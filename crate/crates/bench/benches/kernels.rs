//! Criterion benchmarks for the hot kernels: spectral derivatives,
//! oscillation, block construction, and one ideal defect assembly.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use cilab_core::blocks::ProfileSet;
use cilab_core::dynamo::{build_blocks, build_perturbation, StepParams};
use cilab_core::{GridSpec, ScalarField, VectorField};
use std::f64::consts::TAU;

fn smooth_vector(spec: GridSpec) -> VectorField {
    VectorField::from_comps(vec![
        ScalarField::from_fn(spec, |x| 0.5 + 0.2 * (TAU * x[0]).sin()),
        ScalarField::from_fn(spec, |x| (TAU * x[1]).cos() * (TAU * x[2]).sin()),
        ScalarField::from_fn(spec, |x| 0.6 + 0.15 * (TAU * x[1]).cos()),
    ])
}

fn bench_spectral(c: &mut Criterion) {
    let spec = GridSpec::new(3, 64, 1.0).unwrap();
    let f = ScalarField::from_fn(spec, |x| {
        (TAU * x[0]).sin() * (2.0 * TAU * x[1]).cos() + (TAU * x[2]).sin()
    });
    let v = smooth_vector(spec);
    c.bench_function("derivative_64", |b| {
        b.iter(|| f.derivative(0, 1).unwrap())
    });
    c.bench_function("curl3_64", |b| b.iter(|| v.curl3().unwrap()));
    c.bench_function("oscillate_64", |b| b.iter(|| f.oscillate(4)));
    c.bench_function("l1_norm_64", |b| b.iter(|| v.lebesgue_norm(1.0).unwrap()));
}

fn bench_blocks(c: &mut Criterion) {
    let pr = ProfileSet::new();
    let spec = GridSpec::new(3, 64, 1.0).unwrap();
    c.bench_function("shear_blocks_64", |b| {
        b.iter(|| build_blocks(&pr, 2.0, 2.0, 2.0, spec).unwrap())
    });
}

fn bench_perturbation(c: &mut Criterion) {
    let pr = ProfileSet::new();
    let spec = GridSpec::new(3, 64, 1.0).unwrap();
    let blocks = build_blocks(&pr, 2.0, 2.0, 2.0, spec).unwrap();
    let r = smooth_vector(spec);
    let params = StepParams { delta: 0.4, eta: 1.0, lambda: 2, mu: 2.0, p: 2.0, q: 2.0 };
    c.bench_function("build_perturbation_64", |b| {
        b.iter_batched(
            || r.clone(),
            |r| build_perturbation(&r, &params, &blocks).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = bench_spectral, bench_blocks, bench_perturbation
}
criterion_main!(kernels);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use gammalab::cell_problem::{solve_w_xi, CellGrid, SolverOptions};
use gammalab::energy::{energy, gradient};
use gammalab::geodesic::sigma_h;
use gammalab::profile::signed_distance;
use gammalab::unfolding::defect_norms;
use gammalab::HomogenizedPotential;
use gammalab_bench::{composite, disk_2d, disk_mask, interface_1d, problem};

fn energy_kernels(c: &mut Criterion) {
    let u = interface_1d(1 << 16, 0.05);
    let pb = problem(1);
    c.bench_function("energy_1d_65536", |b| b.iter(|| energy(black_box(&u), &pb).unwrap()));
    c.bench_function("gradient_1d_65536", |b| b.iter(|| gradient(black_box(&u), &pb).unwrap()));
    let v = disk_2d(256, 0.05);
    let pb2 = problem(2);
    c.bench_function("gradient_2d_256", |b| b.iter(|| gradient(black_box(&v), &pb2).unwrap()));
}

fn unfolding_kernels(c: &mut Criterion) {
    let u = interface_1d(1 << 14, 0.05);
    c.bench_function("defect_norms_1d_16384", |b| b.iter(|| defect_norms(black_box(&u), 1.0 / 32.0, 1.0 / 512.0, &[0.0]).unwrap()));
}

fn geometry_kernels(c: &mut Criterion) {
    let mask = disk_mask(256);
    c.bench_function("signed_distance_256", |b| b.iter(|| signed_distance(black_box(&mask)).unwrap()));
}

fn homogenization_kernels(c: &mut Criterion) {
    let p = composite(1);
    let opts = SolverOptions::default();
    let grid = CellGrid::new(16, 16).unwrap();
    c.bench_function("cell_solve_xi_0.03", |b| b.iter(|| solve_w_xi(&p, black_box(&[0.3]), 0.03, grid, &opts).unwrap()));
    let wh = HomogenizedPotential::with_default_resolution(p.clone());
    c.bench_function("sigma_h_scalar", |b| b.iter(|| sigma_h(&wh, black_box(&[-1.0]), &[1.0]).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = energy_kernels, unfolding_kernels, geometry_kernels, homogenization_kernels
}
criterion_main!(kernels);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hmmflow::driver::simulate;
use hmmflow::macrofv::{dirichlet_guess, step};
use hmmflow::mesh::TorusMesh;
use hmmflow::microcell::{CellSolution, MicroConfig};
use hmmflow_bench::{checkerboard, layered};

fn cell_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("cell_solve");
    for m in [16, 32, 64] {
        let cfg = checkerboard(4, m).unwrap();
        let micro = MicroConfig { m, ..cfg.micro };
        let torus = TorusMesh::build(m).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| CellSolution::compute(&cfg.coefficient, black_box([0.3, 0.7]), &micro, &torus).unwrap())
        });
    }
    group.finish();
}

fn upscale(c: &mut Criterion) {
    let mut group = c.benchmark_group("upscale");
    group.sample_size(10);
    for nx in [4, 8] {
        let cfg = checkerboard(nx, 16).unwrap();
        let mesh = cfg.mesh().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(nx), &nx, |b, _| {
            b.iter(|| cfg.tensor_source().unwrap().tensor_field(&mesh).unwrap())
        });
    }
    group.finish();
}

fn fv_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("fv_step");
    group.sample_size(10);
    for nx in [8, 16] {
        let cfg = layered(nx, 8, 1).unwrap();
        let sim = simulate(&cfg, &cfg.tensor_source().unwrap()).unwrap();
        let scheme = sim.scheme().unwrap();
        let prev = &sim.trajectory.states[0];
        let t = sim.grid.times()[1];
        group.bench_with_input(BenchmarkId::from_parameter(nx), &nx, |b, _| {
            b.iter(|| step(&scheme, &sim.data, prev, t, &cfg.run.newton).unwrap())
        });
        let guess = dirichlet_guess(&scheme, &sim.data, prev, t);
        group.bench_with_input(BenchmarkId::new("residual", nx), &nx, |b, _| {
            b.iter(|| scheme.residual(black_box(&guess), prev).unwrap())
        });
    }
    group.finish();
}

fn estimator(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimator");
    group.sample_size(10);
    for nx in [8, 16] {
        let cfg = layered(nx, 8, 2).unwrap();
        let source = cfg.tensor_source().unwrap();
        let sim = simulate(&cfg, &source).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(nx), &nx, |b, _| {
            b.iter(|| sim.estimate(&source, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cell_solve, upscale, fv_step, estimator);
criterion_main!(benches);

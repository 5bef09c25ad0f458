use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ovs_bench::small_scene;
use ovs_core::mechanics::{MechBc, ThermoelasticSystem};
use ovs_core::mesh::{optical_path_samples, VoxelMesh};
use ovs_core::optics::{propagate, SectionBirefringence};
use ovs_core::scene::Scene;
use ovs_core::thermal::run_transient;

fn bench_voxelize(c: &mut Criterion) {
    let scene = Scene::default_scene();
    c.bench_function("voxelize_default_1mm", |b| {
        b.iter(|| VoxelMesh::build(black_box(&scene)).unwrap())
    });
}

fn bench_thermal(c: &mut Criterion) {
    let scene = small_scene();
    let mesh = VoxelMesh::build(&scene).unwrap();
    c.bench_function("thermal_transient_small", |b| {
        b.iter(|| run_transient(black_box(&mesh), &scene.sim).unwrap())
    });
}

fn bench_mechanics(c: &mut Criterion) {
    let scene = small_scene();
    let mesh = VoxelMesh::build(&scene).unwrap();
    let history = run_transient(&mesh, &scene.sim).unwrap();
    let system = ThermoelasticSystem::new(&mesh, MechBc::Standard, 1e-9).unwrap();
    let last = history.fields.last().unwrap();
    c.bench_function("thermoelastic_solve_small", |b| {
        b.iter(|| system.solve(black_box(last), 300.0, None).unwrap())
    });
}

fn bench_jones(c: &mut Criterion) {
    let scene = small_scene();
    let mesh = VoxelMesh::build(&scene).unwrap();
    let samples = optical_path_samples(&mesh, &scene).unwrap();
    let sections: Vec<SectionBirefringence> = samples
        .lengths
        .iter()
        .enumerate()
        .map(|(k, &l)| SectionBirefringence {
            delta_n: 1e-7,
            theta: 0.1 * k as f64,
            theta_signed: 0.1 * k as f64,
            delta_m: 0.01 * (k + 1) as f64,
            length: l,
        })
        .collect();
    c.bench_function("jones_chain_10_sections", |b| {
        b.iter(|| propagate(black_box(&sections)))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_voxelize, bench_thermal, bench_mechanics, bench_jones
}
criterion_main!(benches);

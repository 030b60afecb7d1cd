use std::hint::black_box;

use boltzsim::collision::*;
use boltzsim::levy::{psi, LevyCtx};
use boltzsim::sde::*;
use boltzsim::stats::entropy_knn;
use boltzsim::*;
use criterion::{criterion_group, criterion_main, Criterion};

fn collisions(c: &mut Criterion) {
    let v = Vec3::new(0.3, -1.2, 0.7);
    let w = Vec3::new(-0.4, 0.5, 1.1);
    let a = CollisionAngles::new(0.3, 1.7).unwrap();
    c.bench_function("post_collision", |b| b.iter(|| post_collision(black_box(v), black_box(w), a)));
    c.bench_function("tanaka_phi0", |b| b.iter(|| tanaka_phi0(black_box(v - w), black_box(w))));
}

fn background() -> Vec<Snapshot> {
    let cfg = SimConfig {
        n_particles: 500,
        t_end: 1.0,
        dt: 1e-3,
        cross_section: CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap(),
        scheme: Scheme::Nanbu,
        seed: 1,
        snapshot_times: vec![0.0, 0.5, 1.0],
        moments: vec![],
    };
    simulate(&InitialLaw::Gaussian { mean: Vec3::ZERO, sigma: 1.0 }, &cfg).unwrap()
}

fn particles(c: &mut Criterion) {
    let f0 = InitialLaw::Gaussian { mean: Vec3::ZERO, sigma: 1.0 };
    let cfg = SimConfig {
        n_particles: 2000,
        t_end: 0.01,
        dt: 1e-3,
        cross_section: CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap(),
        scheme: Scheme::Nanbu,
        seed: 1,
        snapshot_times: vec![0.01],
        moments: vec![],
    };
    let mut g = c.benchmark_group("particles");
    g.sample_size(20);
    g.bench_function("nanbu_10_steps_n2000", |b| b.iter(|| simulate(&f0, &cfg).unwrap()));
    let bg = background();
    let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(100.0).unwrap();
    let kernel = TaggedKernel::from_truncation(&cs).unwrap();
    let mut seed = 0;
    g.bench_function("tagged_path", |b| {
        b.iter(|| {
            seed += 1;
            tagged_path(&bg, Vec3::X, 1.0, 0.4, &kernel, seed).unwrap()
        })
    });
    g.finish();
}

fn diagnostics(c: &mut Criterion) {
    let bg = background();
    let ctx = LevyCtx::new(0.1, 1.0, Vec3::new(0.5, 0.0, 0.0), &bg, CrossSection::new(0.5, 0.5).unwrap()).unwrap();
    let mut g = c.benchmark_group("diagnostics");
    g.sample_size(20);
    g.bench_function("psi_n500", |b| b.iter(|| psi(&ctx, black_box(Vec3::new(30.0, 10.0, -5.0))).unwrap()));
    let m = bg[2].measure.clone();
    g.bench_function("entropy_knn_n500", |b| b.iter(|| entropy_knn(&m, 4, 1).unwrap()));
    g.finish();
}

criterion_group!(benches, collisions, particles, diagnostics);
criterion_main!(benches);

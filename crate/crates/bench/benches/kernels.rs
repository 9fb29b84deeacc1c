use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wermerlab::disks::{BetaRaster, HnSampling, HnSample};
use wermerlab::harmonic::{self, BoundaryTarget, SlitDisk};
use wermerlab::potential::{self, ShellGrid};
use wermerlab::wermer::{self, BranchTerms};
use wermerlab::{lattice, Complex64};

fn lattice_and_branches(c: &mut Criterion) {
    c.bench_function("spiral_coords 1..10^4", |b| {
        b.iter(|| (1..=10_000).map(|i| lattice::spiral_coords(black_box(i)).unwrap().0).sum::<i64>())
    });
    let s6 = wermer::build_schedule(6, 0.5, 2048).unwrap();
    let z = Complex64::new(2.3, -1.1);
    let w = Complex64::new(0.4, 0.7);
    c.bench_function("branch values m=6", |b| b.iter(|| BranchTerms::at(&s6, black_box(z)).values()));
    c.bench_function("phi_m m=6", |b| b.iter(|| potential::phi_m(&s6, black_box(z), black_box(w))));
    c.bench_function("alpha_bound n=5 m=6", |b| b.iter(|| wermer::alpha_bound(&s6, 5, 0.05).unwrap()));
    c.bench_function("shift_error p=4", |b| {
        let level = s6.truncate(4).unwrap();
        b.iter(|| wermer::shift_error(&level, 4, 0.0, 512).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let s4 = wermer::build_schedule(4, 0.5, 512).unwrap();
    let mut g = c.benchmark_group("calibration");
    g.sample_size(10);
    let grid = ShellGrid { z_spacing: 0.5, theta_samples: 8, margin: 0.25 };
    g.bench_function("calibrate_q n=3 m=4", |b| b.iter(|| potential::calibrate_q(&s4, 3, 0.01, grid).unwrap()));
    let sample = HnSample::draw(&s4, 3, HnSampling { count: 4, ..Default::default() }, 1).unwrap();
    g.bench_function("beta raster 64", |b| b.iter(|| BetaRaster::new(&s4, &sample.disks[0], 64)));
    g.finish();
}

fn harmonic_measure(c: &mut Criterion) {
    let disk = SlitDisk::new(1.0, vec![(Complex64::new(0.4, 0.0), Complex64::new(1.0, 0.0))]).unwrap();
    let mut g = c.benchmark_group("harmonic");
    g.sample_size(10);
    g.bench_function("walk on spheres 10^4", |b| {
        b.iter(|| harmonic::harmonic_measure(&disk, BoundaryTarget::Slits, Complex64::new(0.0, 0.0), 10_000, 3).unwrap())
    });
    g.finish();
}

criterion_group!(benches, lattice_and_branches, calibration, harmonic_measure);
criterion_main!(benches);

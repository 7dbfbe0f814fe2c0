//! Sequential and rayon execution of the two workloads that fan out: the
//! per-seed sweep and the Monte Carlo matrix-law check.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use spp_core::metrics::LyapunovCoeffs;
use spp_core::par::Exec;
use spp_core::topology::{build_mixing, TopologyKind};
use spp_core::verify::{matrix_laws, preset_setup, random_quadratic, seed_sweep};
use spp_core::{Preset, Regime};

fn modes() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn bench_seed_sweep(c: &mut Criterion) {
    let problem = random_quadratic(8, 16, 4, 1);
    let base = build_mixing(&TopologyKind::RingDirected, 8).unwrap();
    let (problem, stepper) = preset_setup(Preset::GtSaga, &problem, &base, 0.05, 2, 0.0, 1.0).unwrap();
    let coeffs = LyapunovCoeffs::opt_gap_only(Regime::GtVr);
    let x0 = DVector::zeros(4);
    let seeds: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("seed_sweep_16x500");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(seed_sweep(&problem, &stepper, coeffs, &x0, &seeds, 500, 50, exec).unwrap()))
        });
    }
    group.finish();
}

fn bench_matrix_laws(c: &mut Criterion) {
    let mut group = c.benchmark_group("matrix_laws_2000");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(matrix_laws(2000, 3, exec)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_seed_sweep, bench_matrix_laws);
criterion_main!(benches);

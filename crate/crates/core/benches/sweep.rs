use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lbaw_core::dispersion::{run_sweep, SweepConfig};
use lbaw_core::materials::bundled_materials;
use lbaw_core::mbvd::{add_noise, derive_metrics, fit, linspace, synthesize, MbvdParams};
use lbaw_core::parallel::par_map;

fn small_sweep() -> SweepConfig {
    let mut families = SweepConfig::default().families;
    families.truncate(2);
    SweepConfig {
        ratios: vec![0.08, 0.1125, 0.16, 0.25],
        families,
        f_max: 2e9,
        ..SweepConfig::default()
    }
}

fn bench_sweep(c: &mut Criterion) {
    let cfg = small_sweep();
    let db = bundled_materials();
    let mut g = c.benchmark_group("dispersion_sweep");
    g.sample_size(10).measurement_time(Duration::from_secs(30));
    for (name, jobs) in [("sequential", 1), ("parallel", 0)] {
        g.bench_with_input(BenchmarkId::new(name, cfg.ratios.len()), &jobs, |b, &jobs| {
            b.iter(|| run_sweep(black_box(&cfg), &db, jobs).unwrap())
        });
    }
    g.finish();
}

fn bench_fits(c: &mut Criterion) {
    let p = MbvdParams::from_targets(673e6, 0.43, 1016.3, 0.1e-12, 2.0, 1.0).unwrap();
    let m = derive_metrics(&p);
    let clean = synthesize(&p, &linspace(0.8 * m.fs, 1.2 * m.fp, 2001)).unwrap();
    let spectra: Vec<_> = (0..20).map(|s| add_noise(&clean, 0.01, s)).collect();
    let mut g = c.benchmark_group("mbvd_batch_fit");
    g.sample_size(10);
    for (name, jobs) in [("sequential", 1), ("parallel", 0)] {
        g.bench_with_input(BenchmarkId::new(name, spectra.len()), &jobs, |b, &jobs| {
            b.iter(|| par_map(&spectra, jobs, |s| fit(black_box(s), None).unwrap().metrics.fom))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_sweep, bench_fits);
criterion_main!(benches);

//! Sweep throughput: rayon fan-out versus the sequential twin on the same
//! config. Both paths must agree bit for bit (asserted once up front), so
//! the comparison is purely about scheduling overhead and core utilization.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gedlab_core::harness::{default_config, run_sweep, run_sweep_sequential, seeds_for, RunConfig};

fn bench_config() -> RunConfig {
    let mut cfg = default_config();
    cfg.horizon = 64;
    cfg.simplex_resolution = 20;
    cfg
}

fn sweep_modes(c: &mut Criterion) {
    let cfg = bench_config();
    let seeds = seeds_for(cfg.seed, 8);

    let par = run_sweep(&cfg, &seeds).expect("parallel sweep runs");
    let seq = run_sweep_sequential(&cfg, &seeds).expect("sequential sweep runs");
    assert_eq!(
        serde_json::to_string(&par).unwrap(),
        serde_json::to_string(&seq).unwrap(),
        "modes must agree before timing means anything"
    );

    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", seeds.len()), &seeds, |b, s| {
        b.iter(|| run_sweep(&cfg, s).unwrap())
    });
    group.bench_with_input(
        BenchmarkId::new("sequential", seeds.len()),
        &seeds,
        |b, s| b.iter(|| run_sweep_sequential(&cfg, s).unwrap()),
    );
    group.finish();
}

criterion_group!(benches, sweep_modes);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dltrack_core::engine::{e_step, init_hypotheses};
use dltrack_core::scenario::{generate, ScenarioConfig};
use dltrack_core::{run_dl, DLConfig};

fn bench_e_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("e_step");
    for clutter in [50usize, 200, 500] {
        let batch = generate(&ScenarioConfig::fig2(clutter)).unwrap().batch;
        let hs = init_hypotheses(batch.bounds(), &DLConfig::default()).unwrap();
        g.bench_with_input(
            BenchmarkId::from_parameter(batch.len()),
            &batch,
            |b, batch| b.iter(|| e_step(batch, &hs).unwrap()),
        );
    }
    g.finish();
}

fn bench_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_dl");
    g.sample_size(10);
    for clutter in [50usize, 200] {
        let batch = generate(&ScenarioConfig::fig2(clutter)).unwrap().batch;
        g.bench_with_input(
            BenchmarkId::from_parameter(batch.len()),
            &batch,
            |b, batch| b.iter(|| run_dl(batch, &DLConfig::default()).unwrap()),
        );
    }
    g.finish();
}

criterion_group!(benches, bench_e_step, bench_run);
criterion_main!(benches);

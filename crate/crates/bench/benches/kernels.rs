use criterion::{black_box, criterion_group, criterion_main, Criterion};
use insdual::ddp::{backward_step_grid, backward_step_sos, stopping_moments, DdpConfig};
use insdual::model::RetentionPolicy;
use insdual::occupation::{build_occupation, OccupationOptions};
use insdual::sim::{estimate_gain, SimOptions, StrategySpec};
use insdual_bench::fixture;

fn strategy() -> StrategySpec {
    StrategySpec::barrier(RetentionPolicy::Proportional { theta: 0.5 }, 1.0, 3.0)
}

fn simulate(c: &mut Criterion) {
    let (m, b) = fixture();
    c.bench_function("estimate_gain/1000 paths", |bch| {
        bch.iter(|| estimate_gain(&m, &strategy(), 1.0, black_box(b.t), 1000, 1, &SimOptions::default()).unwrap())
    });
}

fn occupation(c: &mut Criterion) {
    let (m, b) = fixture();
    let opts = OccupationOptions::default();
    c.bench_function("build_occupation/binned 500 paths", |bch| {
        bch.iter(|| build_occupation(&m, &strategy(), 1.0, 1.0, 500, 1, &b, &opts, &SimOptions::default()).unwrap())
    });
}

fn backward(c: &mut Criterion) {
    let (m, b) = fixture();
    let cfg = DdpConfig::default();
    let occ = build_occupation(&m, &strategy(), 1.0, 1.0, 500, 1, &b, &cfg.occupation, &cfg.sim).unwrap().system;
    let mom = stopping_moments(&occ, &m, &b, cfg.r).unwrap();
    let mut g = c.benchmark_group("backward");
    g.sample_size(10);
    g.bench_function("grid r=3", |bch| bch.iter(|| backward_step_grid(&m, &b, &mom, Some(1.0), &cfg).unwrap()));
    g.bench_function("sos r=3", |bch| bch.iter(|| backward_step_sos(&m, &b, &mom, Some(1.0), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, simulate, occupation, backward);
criterion_main!(benches);

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use exitbound::conic::SolverSettings;
use exitbound::escape::{baseline_bound, certify, GChoice, GSpec};
use exitbound::linalg::{expm, solve_lyapunov};
use exitbound::oracle::{escape_time, Trajectory, DEFAULT_TOL};
use exitbound::switched::{fixtures as switched_fixtures, prepare, simulate};
use exitbound_bench::workload;

fn models(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let mut group = c.benchmark_group("models");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for n in [2, 4] {
        let (ms, [one, two]) = workload(1, n, 3).unwrap();
        let a = &ms[0];
        let log = GSpec::Log(None).resolve(a).unwrap();
        for (name, fixture, g) in [
            ("in_one", &one, GChoice::MinusOne),
            ("in_log", &one, log),
            ("out_one", &two, GChoice::MinusOne),
            ("out_log", &two, log),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| certify(a, &fixture.region, g, &settings).unwrap())
            });
        }
        group.bench_with_input(BenchmarkId::new("baseline", n), &n, |b, _| {
            b.iter(|| baseline_bound(a, &one.region, &settings).unwrap())
        });
    }
    group.finish();
}

fn numerics(c: &mut Criterion) {
    let (ms, [one, _]) = workload(1, 10, 5).unwrap();
    let a = &ms[0];
    c.bench_function("expm_10", |b| b.iter(|| expm(black_box(a), 1.0).unwrap()));
    c.bench_function("lyapunov_10", |b| b.iter(|| solve_lyapunov(black_box(a)).unwrap()));
    let tr = Trajectory::new(a.clone(), one.x0.clone()).unwrap();
    c.bench_function("oracle_10", |b| b.iter(|| escape_time(&tr, &one.region, 50.0, 20_000, DEFAULT_TOL).unwrap()));
}

fn switching(c: &mut Criterion) {
    let sys = prepare(&switched_fixtures::spiral_pair_2d(), GSpec::Log(None), &SolverSettings::default()).unwrap();
    c.bench_function("simulate_spiral_pair", |b| b.iter(|| simulate(&sys, &[2.5, 0.5], 20.0, 1000).unwrap()));
}

criterion_group!(benches, models, numerics, switching);
criterion_main!(benches);

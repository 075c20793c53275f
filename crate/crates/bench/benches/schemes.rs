use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppde::grid::{build_grid, default_domain_for, make_operator};
use ppde::model::problem_by_name;
use ppde::regression::{RegressionBasis, RegressionConfig};
use ppde::{ftw_solve, FtwConfig, SchemeConfig, SchemeKind, ValueSlice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_step(c: &mut Criterion) {
    let p = problem_by_name("example1").unwrap();
    let mut group = c.benchmark_group("grid_step");
    for kind in [SchemeKind::Fd, SchemeKind::Trinomial, SchemeKind::SemiLagrangian] {
        let cfg = SchemeConfig::with_h(0.02);
        let g = build_grid(&p, kind, &cfg, &default_domain_for(&p, kind)).unwrap();
        let op = make_operator(kind, &p, &g, &cfg).unwrap();
        let slice = ValueSlice { t: 0.52, values: (0..g.len()).map(|i| (i as f64 * 1e-3).sin()).collect() };
        group.bench_function(BenchmarkId::from_parameter(kind), |b| b.iter(|| op.step(&slice, 0.5).unwrap()));
    }
    group.finish();
}

fn regression_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let avals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let targets: Vec<f64> = xs.iter().zip(&avals).map(|(x, a)| x.cos() + a * x).collect();
    let config = RegressionConfig::default();
    c.bench_function("regression_fit_100k", |b| {
        b.iter(|| RegressionBasis::new(&xs, &avals, &config).unwrap().fit(&targets).map(|_| ()).unwrap())
    });
}

fn ftw_small(c: &mut Criterion) {
    let p = problem_by_name("heat").unwrap();
    let cfg = FtwConfig { h: 0.1, n_paths: 20_000, ..Default::default() };
    let mut group = c.benchmark_group("ftw");
    group.sample_size(10);
    group.bench_function("heat_h0.1_20k", |b| b.iter(|| ftw_solve(&p, &cfg).unwrap().value));
    group.finish();
}

criterion_group!(benches, grid_step, regression_fit, ftw_small);
criterion_main!(benches);

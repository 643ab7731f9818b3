use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use svrb::par;
use svrb::problems::{toy_reweighting, MultiTaskTemperatureProblem, ReweightingConfig};
use svrb::quadratic::QuadraticTask;
use svrb::rng::{stream, StreamKind};
use svrb::schedule::ScheduleConfig;
use svrb::solvers::{svrb_run, InitConfig, RunConfig};
use svrb::{BilevelTask, DenseVector};

fn lower_solves(c: &mut Criterion) {
    let base = toy_reweighting(100, 50, 10, 0.3, 11, ReweightingConfig::default()).unwrap();
    let prob = MultiTaskTemperatureProblem::new(base, 200, 11).unwrap();
    let fam = prob.family().unwrap();
    let x = DenseVector::from_element(fam.upper_dim(), 0.1);
    let solve = |t: &Arc<dyn BilevelTask>| t.solve_lower(&x, None, 1e-8).unwrap();

    let mut group = c.benchmark_group("objective_m200");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| black_box(par::map_seq(fam.tasks(), solve))));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(|| black_box(par::map_par(fam.tasks(), solve))));
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut rng = stream(1, 0, 0, StreamKind::Problem);
    let task = Arc::new(QuadraticTask::random(10, 10, 4.0, 0.1, 1.0, &mut rng).unwrap());
    let cfg = ScheduleConfig::polynomial_third(0.25, 8.0);
    let init = InitConfig::new(DenseVector::zeros(10));
    let seeds: Vec<u64> = (0..16).collect();
    let run_seed = |&s: &u64| svrb_run(task.clone(), &cfg, &RunConfig::new(2000, s), &init, None).unwrap().x;

    let mut group = c.benchmark_group("svrb_16_seeds");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("sequential", 16), &seeds, |b, s| {
        b.iter(|| black_box(par::map_seq(s, run_seed)))
    });
    #[cfg(feature = "parallel")]
    group.bench_with_input(BenchmarkId::new("parallel", 16), &seeds, |b, s| {
        b.iter(|| black_box(par::map_par(s, run_seed)))
    });
    group.finish();
}

criterion_group!(benches, lower_solves, seed_sweep);
criterion_main!(benches);

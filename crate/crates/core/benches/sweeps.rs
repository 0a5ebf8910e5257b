//! Sequential versus data-parallel execution on the three batch
//! workloads: a T-sweep of one scenario, Monte Carlo repetitions of the
//! adaptive estimator, and a sweep over random scenarios.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dqm_core::estimation::{monte_carlo, AdaptivePlan, ShotBudget};
use dqm_core::par;
use dqm_core::scenarios::{builtin, random_scenario, run_scenario, Scenario};
use dqm_core::{ControlStrategy, Execution};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn t_sweep(c: &mut Criterion) {
    let mut def = builtin("ac_fields").unwrap();
    def.sweep = vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
    def.base_steps = 500;
    let s = Scenario::new(def).unwrap();
    let mut group = c.benchmark_group("t_sweep");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_function(BenchmarkId::new("ac_fields", label), |b| {
            b.iter(|| run_scenario(black_box(&s), exec).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo_reps(c: &mut Criterion) {
    let s = Scenario::new(builtin("radar").unwrap()).unwrap();
    let plan = AdaptivePlan {
        net: s.network(),
        truth: s.truth().clone(),
        prior: s.prior().clone(),
        w: s.weights().clone(),
        grid: s.grid_for(1.0).unwrap(),
        strategy: ControlStrategy::Cancel,
        probe: s.def().probe.clone(),
    };
    let budget = ShotBudget::split(20_000, 0.1, 2).unwrap();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_function(BenchmarkId::new("radar_8_reps", label), |b| {
            b.iter(|| monte_carlo(black_box(&plan), budget, 7, 8, exec).unwrap())
        });
    }
    group.finish();
}

fn random_sweep(c: &mut Criterion) {
    let defs: Vec<_> = (0..16).map(|i| random_scenario(100 + i, 2, 2, 3, 1.0).unwrap()).collect();
    let mut group = c.benchmark_group("random_scenarios");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_function(BenchmarkId::new("16_networks", label), |b| {
            b.iter(|| {
                par::try_map_indexed(exec, defs.len(), |i| {
                    let s = Scenario::new(defs[i].clone())?;
                    run_scenario(&s, Execution::Sequential)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, t_sweep, monte_carlo_reps, random_sweep);
criterion_main!(benches);

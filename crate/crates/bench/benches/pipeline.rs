use cexplain_bench::{explanation_problem, grid_instance, small_warehouse_instance, Instance};
use cexplain_core::mdp::{max_reach_probability, IterationOptions};
use cexplain_core::pipeline::{run_explain, ExplainOptions};
use cexplain_core::solver::{solve, solve_lp_relaxation, SolverConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn explain(inst: &Instance) {
    run_explain(&inst.mdp, &inst.vocabulary, &inst.requirement, &ExplainOptions::default()).unwrap();
}

fn bench_explain(c: &mut Criterion) {
    let fixture = small_warehouse_instance();
    c.bench_function("explain/small_warehouse", |b| b.iter(|| explain(&fixture)));
    let mut group = c.benchmark_group("explain/grid");
    group.sample_size(10);
    for n in [5, 10, 20] {
        let inst = grid_instance(n, 0.1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| b.iter(|| explain(inst)));
    }
    group.finish();
}

fn bench_value_iteration(c: &mut Criterion) {
    let inst = grid_instance(20, 0.1);
    c.bench_function("max_reach/grid_20", |b| {
        b.iter(|| max_reach_probability(&inst.mdp, &inst.requirement, &IterationOptions::default()).unwrap())
    });
}

fn bench_solver(c: &mut Criterion) {
    let p = explanation_problem(&small_warehouse_instance());
    c.bench_function("lp_relaxation/small_warehouse", |b| b.iter(|| solve_lp_relaxation(&p, &[])));
    c.bench_function("branch_and_bound/small_warehouse", |b| b.iter(|| solve(&p, &SolverConfig::default())));
}

criterion_group!(benches, bench_explain, bench_value_iteration, bench_solver);
criterion_main!(benches);

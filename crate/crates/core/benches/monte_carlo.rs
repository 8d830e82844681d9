use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latent_ipw::simulation::{monte_carlo_with, Case, Execution, SimScenario};

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for n_rep in [16, 64] {
        let scn = SimScenario::table(Case::Case1, 4).unwrap().with_reps(n_rep).with_seed(1);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, n_rep), &scn, |b, scn| {
                b.iter(|| monte_carlo_with(scn, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ringsim::timeline::{Server, Timeline};
use ringsim::{simulate, Algorithm, Result, RunOptions, StopRule, WorkerProfile};
use ringsim_bench::workload;

struct Sink;

impl Server for Sink {
    fn on_event(
        &mut self,
        _: &ringsim::timeline::GradientEvent,
        _: &mut Timeline,
    ) -> Result<Option<ringsim::IterationRecord>> {
        Ok(None)
    }
}

fn event_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("event_loop");
    for n in [10usize, 100, 1000] {
        let taus: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.37).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let profiles = WorkerProfile::fixed_all(&taus).unwrap();
                let mut tl = Timeline::new(profiles, 1).unwrap();
                tl.run(&mut Sink, &StopRule::events(20_000)).unwrap();
            })
        });
    }
    group.finish();
}

fn algorithms(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    let (problem, profiles) = workload(16, 32);
    for alg in [Algorithm::Ringleader, Algorithm::MaleniaParameterFree, Algorithm::Ia2sgd, Algorithm::Minibatch] {
        group.bench_function(alg.name(), |b| {
            b.iter(|| {
                let opts = RunOptions::new(0.01, 7, StopRule::events(5_000));
                simulate(&problem, profiles.clone(), &alg, &opts).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, event_loop, algorithms);
criterion_main!(benches);

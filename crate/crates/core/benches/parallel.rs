use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use entangle_core::exec::Execution;
use entangle_core::experiments::{run_scenario_with, ExperimentConfig, Scenario};
use entangle_core::netmodel::InnerProductSpec;
use entangle_core::propensity::estimate_entangled;
use entangle_core::rng::Streams;
use entangle_core::similarity::{expected_normalized_gradient, gaussian_sampler, GradientMethod, InnerProductScore};
use entangle_core::treatment::TreatmentDef;
use entangle_core::Graph;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo_propensity(c: &mut Criterion) {
    let mut rng = Streams::new(1).stream(0);
    let model = InnerProductSpec::generate(60, 3, -2.0, 1.0, 1.0, &mut rng).unwrap();
    let g_minus = Graph::empty(60, false);
    let mut group = c.benchmark_group("estimate_entangled");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_entangled(&model, &g_minus, TreatmentDef::NewDegree, 2000, &Streams::new(2), black_box(exec)))
        });
    }
    group.finish();
}

fn gradient_field(c: &mut Criterion) {
    let model = InnerProductScore { units: 100, dim: 5, a: -3.0, b: 1.0, tau: 1.0 };
    let mut group = c.benchmark_group("expected_normalized_gradient");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let sampler = gaussian_sampler(5, 1.0);
                expected_normalized_gradient(&model, sampler, 20_000, GradientMethod::Analytic, &Streams::new(3), black_box(exec))
            })
        });
    }
    group.finish();
}

fn replicated_study(c: &mut Criterion) {
    let mut config = ExperimentConfig::new(Scenario::SymOneFriend, 4);
    config.sims = 20;
    config.units = 60;
    config.sigmas = vec![1.0];
    config.classes = 5;
    let mut group = c.benchmark_group("run_scenario");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_scenario_with(&config, black_box(exec))));
    }
    group.finish();
}

criterion_group!(benches, monte_carlo_propensity, gradient_field, replicated_study);
criterion_main!(benches);

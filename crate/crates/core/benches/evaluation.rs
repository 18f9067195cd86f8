use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vppe::design::{lhs_sample, sample_gp};
use vppe::ordering::{build_plan, default_scale, Anchor};
use vppe::predict::predict_batch;
use vppe::vecchia::{EvalOptions, VecchiaProblem};
use vppe::{fit, Execution, FitOptions, KernelFamily, KernelSpec, PredictMode, PriorSpec, TrendBasis};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn data(n: usize, k: usize) -> (vppe::DesignMatrix, vppe::OutputMatrix, KernelSpec) {
    let design = lhs_sample(n, 4, 1).unwrap();
    let spec = KernelSpec::new(KernelFamily::Matern32, vec![0.5, 0.8, 1.2, 0.3], 0.0).unwrap();
    let outputs = sample_gp(&design, &spec, 1.0, k, 2).unwrap();
    (design, outputs, spec)
}

fn marginal(c: &mut Criterion) {
    let (design, outputs, spec) = data(2000, 10);
    let scale = default_scale(&design).unwrap();
    let plan = build_plan(&design, 30, &scale, Anchor::Centroid, Execution::default()).unwrap();
    let prior = PriorSpec::jointly_robust(&design).unwrap();
    let mut group = c.benchmark_group("vecchia_marginal_n2000_m30");
    for (name, exec) in MODES {
        let problem = VecchiaProblem::new(&design, &outputs, &plan, TrendBasis::Constant, exec).unwrap();
        group.bench_function(BenchmarkId::new("value_and_gradient", name), |b| {
            b.iter(|| problem.evaluate(&spec, &prior, EvalOptions::with_gradient(false)).unwrap())
        });
    }
    group.finish();
}

fn plan(c: &mut Criterion) {
    let (design, _, _) = data(2000, 1);
    let scale = default_scale(&design).unwrap();
    let mut group = c.benchmark_group("build_plan_n2000_m30");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| build_plan(&design, 30, &scale, Anchor::Centroid, exec).unwrap()));
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let (design, outputs, _) = data(1000, 2);
    let opts = FitOptions { scaling_rounds: 1, ..Default::default() };
    let model = fit(&design, &outputs, KernelFamily::Matern32, TrendBasis::Constant, &opts).unwrap();
    let test = lhs_sample(200, 4, 3).unwrap();
    let mut group = c.benchmark_group("predict_n1000_200pts");
    group.sample_size(10);
    for (name, exec) in MODES {
        for (label, mode) in [("exact", PredictMode::Exact), ("nearest100", PredictMode::Nearest(100))] {
            group.bench_function(BenchmarkId::new(label, name), |b| {
                b.iter(|| predict_batch(&model, test.as_slice(), mode, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, marginal, plan, prediction);
criterion_main!(benches);

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vppe::design::{lhs_sample, sample_gp};
use vppe::exec::Execution;
use vppe::ordering::{build_plan, default_scale, Anchor, ConditioningPlan};
use vppe::{DesignMatrix, KernelFamily, KernelSpec, OutputMatrix, TrendBasis};

/// A random, reasonably conditioned likelihood instance.
pub struct Instance {
    pub design: DesignMatrix,
    pub outputs: OutputMatrix,
    pub spec: KernelSpec,
    pub trend: TrendBasis,
}

impl Instance {
    pub fn plan(&self, m: usize) -> ConditioningPlan {
        let scale = default_scale(&self.design).unwrap();
        build_plan(&self.design, m, &scale, Anchor::Centroid, Execution::Sequential).unwrap()
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }
}

pub const FAMILIES: [KernelFamily; 4] = [
    KernelFamily::Matern32,
    KernelFamily::Matern52,
    KernelFamily::PowerExponential { alpha: 1.0 },
    KernelFamily::PowerExponential { alpha: 1.9 },
];

/// Ranges are drawn relative to the typical point spacing `n^{-1/p}` so the
/// correlation matrices stay well away from singular.
pub fn random_instance(seed: u64, n: usize, p: usize, k: usize, family: KernelFamily, trend: TrendBasis) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = lhs_sample(n, p, seed).unwrap();
    let spacing = (n as f64).powf(-1.0 / p as f64);
    let ranges: Vec<f64> = (0..p).map(|_| spacing * rng.random_range(0.8..2.5)).collect();
    let nugget = if rng.random_bool(0.3) { rng.random_range(1e-3..0.1) } else { 0.0 };
    let spec = KernelSpec::new(family, ranges, nugget).unwrap();
    let truth = KernelSpec::new(KernelFamily::Matern52, vec![0.4; p], 0.0).unwrap();
    let field = sample_gp(&design, &truth, 1.0, k, seed ^ 0x5eed).unwrap();
    let shift: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = design.row(i);
            (0..k).map(|l| field.get(i, l) + shift[l] + 0.5 * x[0]).collect()
        })
        .collect();
    Instance { design, outputs: OutputMatrix::from_rows(&rows).unwrap(), spec, trend }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `‖a - b‖∞ / max(‖b‖∞, 1)`.
pub fn grad_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    diff / scale
}

/// Central differences of `f` at `x` with relative step `rel`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let h = rel * x[j].abs().max(1e-3);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn instance_shape(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize) -> (usize, usize, TrendBasis) {
    let p = rng.random_range(1..=5);
    let trend = if rng.random_bool(0.5) { TrendBasis::Constant } else { TrendBasis::Linear };
    let n = rng.random_range(n_lo.max(trend.q(p) + 3)..=n_hi);
    (n, p, trend)
}

/// Largest relative gap between the `m = n-1` Vecchia value and the exact value.
pub fn oracle_equivalence(count: usize, seed: u64) -> f64 {
    use vppe::exactgp::exact_marginal_neg2log;
    use vppe::vecchia::{EvalOptions, VecchiaProblem};
    use vppe::PriorSpec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..count {
        let (n, p, trend) = instance_shape(&mut rng, 5, 200);
        let k = rng.random_range(1..=3);
        let inst = random_instance(rng.random(), n, p, k, FAMILIES[c % FAMILIES.len()], trend);
        let plan = inst.plan(n - 1);
        let prior = PriorSpec::None;
        let v = VecchiaProblem::new(&inst.design, &inst.outputs, &plan, trend, Execution::default())
            .unwrap()
            .evaluate(&inst.spec, &prior, EvalOptions::value_only())
            .unwrap();
        let e = exact_marginal_neg2log(&inst.design, &inst.outputs, &inst.spec, trend, &prior, EvalOptions::value_only())
            .unwrap();
        worst = worst.max((v.neg2log - e.neg2log).abs() / e.neg2log.abs().max(1.0));
    }
    worst
}

/// Largest gradient error against central differences with step `1e-6·θ`.
pub fn gradient_check(count: usize, seed: u64) -> f64 {
    use vppe::vecchia::{EvalOptions, VecchiaProblem};
    use vppe::PriorSpec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..count {
        let (n, p, trend) = instance_shape(&mut rng, 12, 100);
        let k = rng.random_range(1..=3);
        let inst = random_instance(rng.random(), n, p, k, FAMILIES[c % FAMILIES.len()], trend);
        let m = [3, 10, n - 1][c % 3];
        let plan = inst.plan(m);
        let prior = PriorSpec::jointly_robust(&inst.design).unwrap();
        let problem = VecchiaProblem::new(&inst.design, &inst.outputs, &plan, trend, Execution::default()).unwrap();
        let with_nugget = inst.spec.nugget > 0.0;
        let mut theta = inst.spec.ranges.clone();
        if with_nugget {
            theta.push(inst.spec.nugget);
        }
        let spec_at = |t: &[f64]| {
            let nugget = if with_nugget { t[p] } else { 0.0 };
            KernelSpec::new(inst.spec.family, t[..p].to_vec(), nugget).unwrap()
        };
        let opts = EvalOptions { gradient: false, estimate_nugget: with_nugget };
        let value = |t: &[f64]| problem.evaluate(&spec_at(t), &prior, opts).unwrap().neg2log;
        let analytic = problem
            .evaluate(&inst.spec, &prior, EvalOptions::with_gradient(with_nugget))
            .unwrap()
            .grad
            .unwrap();
        let fd = central_diff(value, &theta, 1e-6);
        worst = worst.max(grad_rel_err(&analytic, &fd));
    }
    worst
}

/// Largest relative gap between `n σ²_m` and `S̃²` for single-output instances.
pub fn profiled_identity(count: usize, seed: u64) -> f64 {
    use vppe::vecchia::VecchiaProblem;
    use vppe::PriorSpec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..count {
        let (n, p, trend) = instance_shape(&mut rng, 5, 200);
        let inst = random_instance(rng.random(), n, p, 1, FAMILIES[c % FAMILIES.len()], trend);
        let m = rng.random_range(1..n);
        let plan = inst.plan(m);
        let factors = VecchiaProblem::new(&inst.design, &inst.outputs, &plan, trend, Execution::default())
            .unwrap()
            .factors(&inst.spec)
            .unwrap();
        let s2 = factors.marginal(&PriorSpec::None, false).unwrap().s2[0];
        let (_, s2m) = factors.profiled_neg2log().unwrap();
        worst = worst.max(rel_err(n as f64 * s2m, s2));
    }
    worst
}

pub struct InterpolationReport {
    pub max_error: f64,
    pub max_c_star_star: f64,
    pub max_weight_sum_gap: f64,
}

/// Predicts back at the training points of a noise-free fit and sums the
/// weights at `n_points` random inputs under a constant trend.
pub fn interpolation_and_weights(n: usize, n_points: usize, seed: u64) -> InterpolationReport {
    use vppe::fitting::fit;
    use vppe::predict::{ppe_weights, ExactPredictor};
    use vppe::{FitOptions, Method};
    let p = 3;
    let design = lhs_sample(n, p, seed).unwrap();
    let truth = KernelSpec::new(KernelFamily::Matern52, vec![0.4, 0.6, 0.8], 0.0).unwrap();
    let outputs = sample_gp(&design, &truth, 1.0, 2, seed + 1).unwrap();
    let opts = FitOptions { method: Method::Vecchia { m: 15 }, ..Default::default() };
    let model = fit(&design, &outputs, KernelFamily::Matern52, TrendBasis::Constant, &opts).unwrap();
    let pred = ExactPredictor::new(&model).unwrap();
    let mut max_error = 0.0f64;
    let mut max_c = 0.0f64;
    for i in 0..n {
        let r = pred.predict(design.row(i)).unwrap();
        for (a, b) in r.mean.iter().zip(outputs.row(i)) {
            max_error = max_error.max((a - b).abs());
        }
        max_c = max_c.max(r.c_star_star.abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut gap = 0.0f64;
    for _ in 0..n_points {
        let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let w = ppe_weights(&model, &x).unwrap();
        gap = gap.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    InterpolationReport { max_error, max_c_star_star: max_c, max_weight_sum_gap: gap }
}

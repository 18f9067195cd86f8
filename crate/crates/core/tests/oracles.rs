mod common;

use common::*;
use vppe::exactgp::{exact_marginal_neg2log, gls_estimates};
use vppe::exec::Execution;
use vppe::predict::{predict_exact, predict_nn};
use vppe::vecchia::{EvalOptions, VecchiaProblem};
use vppe::{fit, FitOptions, KernelFamily, Method, PriorSpec, TrendBasis};

#[test]
fn full_conditioning_matches_exact_likelihood() {
    let worst = oracle_equivalence(12, 11);
    assert!(worst < 1e-8, "worst relative gap {worst:e}");
}

#[test]
fn gradient_matches_finite_differences() {
    let worst = gradient_check(15, 12);
    assert!(worst < 1e-5, "worst gradient error {worst:e}");
}

#[test]
fn profiled_value_matches_quadratic_form() {
    let worst = profiled_identity(12, 13);
    assert!(worst < 1e-10, "worst relative gap {worst:e}");
}

#[test]
fn training_points_are_interpolated() {
    let r = interpolation_and_weights(60, 100, 14);
    assert!(r.max_error < 1e-8, "{}", r.max_error);
    assert!(r.max_c_star_star < 1e-8, "{}", r.max_c_star_star);
    assert!(r.max_weight_sum_gap < 1e-10, "{}", r.max_weight_sum_gap);
}

#[test]
fn refinement_approaches_exact_value() {
    let inst = random_instance(21, 120, 3, 2, KernelFamily::Matern52, TrendBasis::Constant);
    let prior = PriorSpec::None;
    let exact = exact_marginal_neg2log(&inst.design, &inst.outputs, &inst.spec, inst.trend, &prior, EvalOptions::value_only())
        .unwrap()
        .neg2log;
    let gaps: Vec<f64> = [5, 10, 20, 119]
        .iter()
        .map(|&m| {
            let plan = inst.plan(m);
            let v = VecchiaProblem::new(&inst.design, &inst.outputs, &plan, inst.trend, Execution::Sequential)
                .unwrap()
                .evaluate(&inst.spec, &prior, EvalOptions::value_only())
                .unwrap()
                .neg2log;
            (v - exact).abs() / exact.abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-8, "{gaps:?}");
}

#[test]
fn trend_basis_change_does_not_change_value() {
    // Reflecting the only input maps the linear trend basis through an invertible matrix.
    let inst = random_instance(22, 50, 1, 1, KernelFamily::Matern32, TrendBasis::Linear);
    let flipped_rows: Vec<Vec<f64>> = inst.design.rows().map(|r| vec![1.0 - r[0]]).collect();
    let flipped = vppe::DesignMatrix::from_rows(&flipped_rows).unwrap();
    let prior = PriorSpec::None;
    let eval = |d: &vppe::DesignMatrix| {
        let plan = inst.plan(8);
        VecchiaProblem::new(d, &inst.outputs, &plan, inst.trend, Execution::Sequential)
            .unwrap()
            .evaluate(&inst.spec, &prior, EvalOptions::value_only())
            .unwrap()
            .neg2log
    };
    let a = eval(&inst.design);
    let b = eval(&flipped);
    assert!(rel_err(b, a) < 1e-10, "{a} {b}");
}

#[test]
fn sequential_and_parallel_values_are_identical() {
    let inst = random_instance(23, 300, 4, 3, KernelFamily::Matern32, TrendBasis::Linear);
    let plan = inst.plan(15);
    let prior = PriorSpec::jointly_robust(&inst.design).unwrap();
    let run = |exec| {
        VecchiaProblem::new(&inst.design, &inst.outputs, &plan, inst.trend, exec)
            .unwrap()
            .evaluate(&inst.spec, &prior, EvalOptions::with_gradient(true))
            .unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.neg2log.to_bits(), b.neg2log.to_bits());
    assert_eq!(a.grad, b.grad);
}

#[test]
fn vecchia_fit_with_full_conditioning_matches_exact_fit() {
    let inst = random_instance(24, 80, 2, 1, KernelFamily::Matern52, TrendBasis::Constant);
    let family = KernelFamily::Matern52;
    let exact = fit(&inst.design, &inst.outputs, family, inst.trend, &FitOptions { method: Method::Exact, ..Default::default() })
        .unwrap();
    let opts = FitOptions { method: Method::Vecchia { m: 79 }, scaling_rounds: 1, ..Default::default() };
    let vecchia = fit(&inst.design, &inst.outputs, family, inst.trend, &opts).unwrap();
    for (a, b) in vecchia.spec().ranges.iter().zip(&exact.spec().ranges) {
        assert!(rel_err(*a, *b) < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn gls_estimates_are_invariant_to_row_order() {
    let inst = random_instance(25, 40, 2, 2, KernelFamily::Matern32, TrendBasis::Linear);
    let (beta, s2) = gls_estimates(&inst.design, &inst.outputs, &inst.spec, inst.trend).unwrap();
    let perm: Vec<usize> = (0..40).rev().collect();
    let (beta_p, s2_p) = gls_estimates(
        &inst.design.select_rows(&perm).unwrap(),
        &inst.outputs.select_rows(&perm).unwrap(),
        &inst.spec,
        inst.trend,
    )
    .unwrap();
    for (a, b) in beta.iter().zip(beta_p.iter()) {
        assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }
    for (a, b) in s2.iter().zip(&s2_p) {
        assert!(rel_err(*b, *a) < 1e-9);
    }
}

#[test]
fn all_neighbours_reproduce_exact_prediction() {
    let inst = random_instance(26, 70, 3, 2, KernelFamily::Matern52, TrendBasis::Constant);
    let model = fit(&inst.design, &inst.outputs, KernelFamily::Matern52, inst.trend, &FitOptions::default()).unwrap();
    for x in [[0.2, 0.4, 0.9], [0.55, 0.1, 0.3]] {
        let a = predict_exact(&model, &x).unwrap();
        let b = predict_nn(&model, &x, 70).unwrap();
        for (u, v) in a.mean.iter().zip(&b.mean) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
        assert!((a.c_star_star - b.c_star_star).abs() <= 1e-12);
    }
}

mod common;

use proptest::prelude::*;
use vppe::design::lhs_sample;
use vppe::exec::Execution;
use vppe::kernels::{corr_1d, corr_1d_dlambda};
use vppe::ordering::{build_plan, Anchor};
use vppe::predict::{relative_rmse, rmse};
use vppe::reshape::{reshape_space_as_input, ReshapeMode};
use vppe::vecchia::vecchia_factors;
use vppe::{KernelFamily, OutputMatrix, TrendBasis};

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Matern32),
        Just(KernelFamily::Matern52),
        (1.0f64..=2.0).prop_map(|alpha| KernelFamily::PowerExponential { alpha }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlation_is_bounded_and_decreasing(f in family(), d in 0.0f64..3.0, e in 0.0f64..1.0, lam in 0.05f64..5.0) {
        let near = corr_1d(f, d, lam).unwrap();
        let far = corr_1d(f, d + e, lam).unwrap();
        prop_assert!(near > 0.0 && near <= 1.0);
        prop_assert!(far <= near);
        prop_assert_eq!(corr_1d(f, 0.0, lam).unwrap(), 1.0);
    }

    #[test]
    fn correlation_grows_with_range(f in family(), d in 0.01f64..3.0, lam in 0.05f64..5.0) {
        prop_assert!(corr_1d_dlambda(f, d, lam).unwrap() >= 0.0);
    }

    #[test]
    fn lhs_is_stratified(n in 1usize..60, p in 1usize..6, seed in any::<u64>()) {
        let x = lhs_sample(n, p, seed).unwrap();
        for j in 0..p {
            let mut bins: Vec<usize> = x.rows().map(|r| (r[j] * n as f64).floor() as usize).collect();
            bins.sort_unstable();
            prop_assert_eq!(bins, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn plans_condition_on_earlier_points(n in 2usize..80, p in 1usize..4, m in 1usize..12, seed in any::<u64>()) {
        let m = m.min(n - 1);
        let x = lhs_sample(n, p, seed).unwrap();
        let plan = build_plan(&x, m, &vec![0.3; p], Anchor::Random(seed), Execution::Sequential).unwrap();
        prop_assert!(plan.validate(n).is_ok());
        let mut seen = plan.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for (i, nb) in plan.neighbors.iter().enumerate() {
            prop_assert_eq!(nb.len(), i.min(m));
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(nb.iter().all(|&j| j < i));
        }
    }

    #[test]
    fn conditional_variances_lie_in_range(seed in 0u64..10_000, n in 10usize..60, m in 1usize..10, f in family()) {
        let inst = common::random_instance(seed, n, 2, 1, f, TrendBasis::Constant);
        let plan = inst.plan(m);
        let factors = vecchia_factors(&inst.design, &inst.outputs, &plan, &inst.spec, inst.trend).unwrap();
        for pt in &factors.points {
            prop_assert!(pt.omega > 0.0);
            prop_assert!(pt.omega <= 1.0 + inst.spec.nugget + pt.jitter + 1e-12);
        }
    }

    #[test]
    fn relative_rmse_is_scale_invariant(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40), s in 0.1f64..10.0) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assume!(truth.iter().any(|t| t.abs() > 1e-3));
        let a = relative_rmse(&pred, &truth).unwrap();
        let sp: Vec<f64> = pred.iter().map(|x| x * s).collect();
        let st: Vec<f64> = truth.iter().map(|x| x * s).collect();
        let b = relative_rmse(&sp, &st).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn full_reshape_row_count(n in 1usize..20, p in 1usize..4, k in 1usize..12) {
        let x = lhs_sample(n, p, 1).unwrap();
        let y = OutputMatrix::new(n, k, (0..n * k).map(|v| v as f64).collect()).unwrap();
        let coords: Vec<f64> = (0..k).map(|c| c as f64).collect();
        let (xd, yd) = reshape_space_as_input(&x, &y, &coords, ReshapeMode::Full).unwrap();
        prop_assert_eq!((xd.nrows(), xd.ncols(), yd.nrows(), yd.ncols()), (n * k, p + 1, n * k, 1));
        let (xs, ys) = reshape_space_as_input(&x, &y, &coords, ReshapeMode::Sampled(3)).unwrap();
        prop_assert_eq!((xs.nrows(), ys.nrows()), (n, n));
    }
}

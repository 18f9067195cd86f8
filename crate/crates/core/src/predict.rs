//! Student-t predictive distributions from a fitted emulator.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::fitting::FittedEmulator;
use crate::linalg::JitteredCholesky;

/// Most negative `c**` accepted silently before clamping to zero.
pub const C_STAR_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveResult {
    pub mean: Vec<f64>,
    /// Squared t-scale per output, `σ̂²_j c**`.
    pub scale2: Vec<f64>,
    pub dof: usize,
    pub c_star_star: f64,
}

impl PredictiveResult {
    /// t-scale per output.
    pub fn scale(&self) -> Vec<f64> {
        self.scale2.iter().map(|v| v.sqrt()).collect()
    }

    /// Central predictive interval with the given coverage, per output.
    pub fn interval(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("interval level {level} must lie in (0, 1)")));
        }
        let t = StudentsT::new(0.0, 1.0, self.dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let z = t.inverse_cdf(0.5 + level / 2.0);
        Ok(self.mean.iter().zip(&self.scale2).map(|(m, s)| (m - z * s.sqrt(), m + z * s.sqrt())).collect())
    }
}

/// Which training points a prediction conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictMode {
    Exact,
    /// The `m_pred` nearest training points in the range-scaled metric.
    Nearest(usize),
}

/// Predictive equations restricted to a subset of training rows.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    /// Training rows in the subset, ascending.
    idx: Vec<usize>,
    /// Normalized inputs of the subset, row-major.
    x: Vec<f64>,
    factor: JitteredCholesky,
    /// `R⁻¹ H`
    g: DMatrix<f64>,
    sigma: Option<Cholesky<f64, Dyn>>,
    /// `R⁻¹ (Y - H β̂)`
    alpha: DMatrix<f64>,
}

impl LocalSystem {
    /// Builds the system for the sorted training rows `idx`.
    pub fn new(model: &FittedEmulator, idx: Vec<usize>) -> Result<Self> {
        let p = model.p();
        let q = model.q();
        let k = model.k();
        let ns = idx.len();
        let spec = model.spec();
        let trend = model.trend();
        let design = model.design();
        let outputs = model.outputs();
        let mut x = Vec::with_capacity(ns * p);
        for &i in &idx {
            x.extend_from_slice(design.row(i));
        }
        let mut r = DMatrix::<f64>::zeros(ns, ns);
        for b in 0..ns {
            r[(b, b)] = 1.0 + spec.nugget;
            for a in b + 1..ns {
                let c = spec.corr(&x[a * p..(a + 1) * p], &x[b * p..(b + 1) * p]);
                r[(a, b)] = c;
                r[(b, a)] = c;
            }
        }
        let factor = JitteredCholesky::new(&r).ok_or_else(|| Error::Conditioning {
            point: None,
            reason: format!("prediction correlation matrix on {ns} points is not positive definite"),
        })?;
        let h = DMatrix::from_row_slice(ns, q, &trend.matrix(&x, p));
        let g = factor.chol.solve(&h);
        let sigma = if q == 0 {
            None
        } else {
            Some(
                h.tr_mul(&g)
                    .cholesky()
                    .ok_or_else(|| Error::Rank("trend basis is singular on the prediction subset".into()))?,
            )
        };
        let beta = model.beta();
        let mut resid = DMatrix::<f64>::zeros(ns, k);
        for (a, &i) in idx.iter().enumerate() {
            for (l, v) in outputs.row(i).iter().enumerate() {
                resid[(a, l)] = *v;
            }
        }
        if q > 0 {
            resid -= &h * &beta;
        }
        let alpha = factor.chol.solve(&resid);
        Ok(Self { idx, x, factor, g, sigma, alpha })
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    fn cross_corr(&self, model: &FittedEmulator, xs: &[f64]) -> DVector<f64> {
        let p = model.p();
        let spec = model.spec();
        DVector::from_iterator(self.idx.len(), self.x.chunks_exact(p).map(|xa| spec.corr(xa, xs)))
    }

    /// Prediction at a normalized point.
    pub fn predict(&self, model: &FittedEmulator, xs: &[f64]) -> PredictiveResult {
        let q = model.q();
        let beta = model.beta();
        let hs = model.trend().eval(xs);
        let r = self.cross_corr(model, xs);
        let mean: Vec<f64> = (0..model.k())
            .map(|l| {
                let trend: f64 = (0..q).map(|a| hs[a] * beta[(a, l)]).sum();
                trend + r.dot(&self.alpha.column(l))
            })
            .collect();
        let z = self
            .factor
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        let mut css = 1.0 - z.norm_squared();
        if let Some(sigma) = &self.sigma {
            let u = DVector::from_vec(hs) - self.g.tr_mul(&r);
            css += u.dot(&sigma.solve(&u));
        }
        if css < 0.0 {
            if css < C_STAR_FLOOR {
                warn!("predictive correlation {css:e} is negative beyond roundoff; clamping to 0");
            }
            css = 0.0;
        }
        PredictiveResult {
            scale2: model.sigma2().iter().map(|s| s * css).collect(),
            mean,
            dof: model.dof(),
            c_star_star: css,
        }
    }

    /// Linear weights on the subset outputs, in subset order.
    pub fn weights(&self, model: &FittedEmulator, xs: &[f64]) -> DVector<f64> {
        let r = self.cross_corr(model, xs);
        let mut w = self.factor.chol.solve(&r);
        if let Some(sigma) = &self.sigma {
            let u = DVector::from_vec(model.trend().eval(xs)) - self.g.tr_mul(&r);
            w += &self.g * sigma.solve(&u);
        }
        w
    }
}

/// Reusable full-data predictor; the `n × n` factorization is built once.
#[derive(Debug, Clone)]
pub struct ExactPredictor<'a> {
    model: &'a FittedEmulator,
    system: LocalSystem,
}

impl<'a> ExactPredictor<'a> {
    pub fn new(model: &'a FittedEmulator) -> Result<Self> {
        Ok(Self { model, system: LocalSystem::new(model, (0..model.n()).collect())? })
    }

    /// Prediction at a raw-unit point.
    pub fn predict(&self, x: &[f64]) -> Result<PredictiveResult> {
        Ok(self.system.predict(self.model, &self.model.normalize_point(x)?))
    }

    /// Weights `ω(x*)` with `ŷ(x*) = ω(x*) Y`, one per training row.
    ///
    /// They reproduce the predictive mean when `β̂` is the generalized least
    /// squares estimate, which holds for models fitted with exact estimates.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.system.weights(self.model, &self.model.normalize_point(x)?).as_slice().to_vec())
    }
}

/// Prediction at a raw-unit point from all training data.
pub fn predict_exact(model: &FittedEmulator, x: &[f64]) -> Result<PredictiveResult> {
    ExactPredictor::new(model)?.predict(x)
}

/// PPE weight vector at a raw-unit point.
pub fn ppe_weights(model: &FittedEmulator, x: &[f64]) -> Result<Vec<f64>> {
    ExactPredictor::new(model)?.weights(x)
}

/// Indices of the `m` training rows nearest to a normalized point, ascending.
pub fn nearest_indices(model: &FittedEmulator, xs: &[f64], m: usize) -> Result<Vec<usize>> {
    let n = model.n();
    if m < 1 || m > n {
        return Err(Error::invalid(format!("m_pred = {m} must satisfy 1 <= m_pred <= n = {n}")));
    }
    if m == n {
        return Ok((0..n).collect());
    }
    let ranges = &model.spec().ranges;
    let mut d: Vec<(f64, usize)> = model
        .design()
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let s: f64 = row.iter().zip(xs).zip(ranges).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
            (s, i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(m - 1, cmp);
    let mut idx: Vec<usize> = d[..m].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Prediction at a raw-unit point from its `m_pred` nearest training points.
///
/// `β̂`, `σ̂²` and the degrees of freedom come from the full fit.
pub fn predict_nn(model: &FittedEmulator, x: &[f64], m_pred: usize) -> Result<PredictiveResult> {
    let xs = model.normalize_point(x)?;
    let idx = nearest_indices(model, &xs, m_pred)?;
    Ok(LocalSystem::new(model, idx)?.predict(model, &xs))
}

/// Predictions at the raw-unit rows of `points` (row-major, width `p`).
pub fn predict_batch(
    model: &FittedEmulator,
    points: &[f64],
    mode: PredictMode,
    exec: Execution,
) -> Result<Vec<PredictiveResult>> {
    let p = model.p();
    if !points.len().is_multiple_of(p) {
        return Err(Error::shape(format!("{} values do not form rows of width {p}", points.len())));
    }
    let count = points.len() / p;
    let row = |i: usize| &points[i * p..(i + 1) * p];
    match mode {
        PredictMode::Exact => {
            let pred = ExactPredictor::new(model)?;
            try_map_indexed(exec, count, |i| pred.predict(row(i)))
        }
        PredictMode::Nearest(m) => try_map_indexed(exec, count, |i| predict_nn(model, row(i), m)),
    }
}

/// Root mean squared error over all entries.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} true values", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("cannot score an empty prediction set"));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// RMSE divided by the root mean square of the true values.
pub fn relative_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let e = rmse(pred, truth)?;
    let rms = (truth.iter().map(|v| v * v).sum::<f64>() / truth.len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::DegenerateData("true outputs are all zero".into()));
    }
    Ok(e / rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{lhs_sample, sample_gp};
    use crate::fitting::{fit, FitOptions, Method};
    use crate::kernels::KernelFamily;
    use crate::trend::TrendBasis;

    fn model(n: usize, k: usize, trend: TrendBasis, seed: u64) -> FittedEmulator {
        let d = lhs_sample(n, 2, seed).unwrap();
        let truth = crate::kernels::KernelSpec::new(KernelFamily::Matern52, vec![0.5, 0.3], 0.0).unwrap();
        let y = sample_gp(&d, &truth, 2.0, k, seed + 7).unwrap();
        let opts = FitOptions { method: Method::Vecchia { m: 10 }, ..Default::default() };
        fit(&d, &y, KernelFamily::Matern52, trend, &opts).unwrap()
    }

    #[test]
    fn interpolates_training_points() {
        let m = model(40, 2, TrendBasis::Linear, 1);
        let d = lhs_sample(40, 2, 1).unwrap();
        let pred = ExactPredictor::new(&m).unwrap();
        for i in 0..40 {
            let r = pred.predict(d.row(i)).unwrap();
            assert!(r.c_star_star <= 1e-8);
            for l in 0..2 {
                assert!((r.mean[l] - m.outputs().get(i, l)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn far_field_reverts_to_trend() {
        let m = model(30, 1, TrendBasis::Constant, 2);
        let r = predict_exact(&m, &[1e3, -1e3]).unwrap();
        assert!((r.mean[0] - m.beta()[(0, 0)]).abs() < 1e-12);
        let rt = ExactPredictor::new(&m).unwrap().system;
        let ones = DVector::from_element(30, 1.0);
        let info = ones.dot(&rt.factor.chol.solve(&ones));
        assert!((r.c_star_star - (1.0 + 1.0 / info)).abs() < 1e-12);
    }

    #[test]
    fn dof_is_n_minus_q() {
        let m = model(30, 1, TrendBasis::Linear, 3);
        assert_eq!(predict_exact(&m, &[0.2, 0.2]).unwrap().dof, 27);
    }

    #[test]
    fn weights_sum_to_one_and_reproduce_mean() {
        let m = model(35, 3, TrendBasis::Constant, 4);
        let pred = ExactPredictor::new(&m).unwrap();
        for x in [[0.1, 0.9], [0.5, 0.5], [1.3, -0.2]] {
            let w = pred.weights(&x).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let mean = pred.predict(&x).unwrap().mean;
            for (l, ml) in mean.iter().enumerate() {
                let via_w: f64 = w.iter().enumerate().map(|(i, wi)| wi * m.outputs().get(i, l)).sum();
                assert!((via_w - ml).abs() < 1e-10);
            }
        }
        let d = lhs_sample(35, 2, 4).unwrap();
        let w = pred.weights(d.row(6)).unwrap();
        for (i, wi) in w.iter().enumerate() {
            assert!((wi - if i == 6 { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }

    #[test]
    fn nearest_with_all_points_matches_exact() {
        let m = model(45, 2, TrendBasis::Linear, 5);
        for x in [[0.3, 0.3], [0.77, 0.05]] {
            let a = predict_exact(&m, &x).unwrap();
            let b = predict_nn(&m, &x, 45).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_neighbour_at_training_point() {
        let m = model(25, 1, TrendBasis::Constant, 6);
        let d = lhs_sample(25, 2, 6).unwrap();
        let r = predict_nn(&m, d.row(3), 1).unwrap();
        assert!((r.mean[0] - m.outputs().get(3, 0)).abs() < 1e-12);
        assert!(predict_nn(&m, d.row(3), 0).is_err());
        assert!(predict_nn(&m, d.row(3), 26).is_err());
    }

    #[test]
    fn nearest_converges_to_exact() {
        let m = model(60, 1, TrendBasis::Constant, 9);
        let x = [0.41, 0.63];
        let exact = predict_exact(&m, &x).unwrap().mean[0];
        let err = |mp: usize| (predict_nn(&m, &x, mp).unwrap().mean[0] - exact).abs();
        assert!(err(40) <= err(3) + 1e-12);
        assert_eq!(err(60), 0.0);
    }

    #[test]
    fn batch_is_order_preserving() {
        let m = model(30, 2, TrendBasis::Constant, 10);
        let pts = [0.1, 0.2, 0.8, 0.4, 0.5, 0.9];
        for mode in [PredictMode::Exact, PredictMode::Nearest(12)] {
            let seq = predict_batch(&m, &pts, mode, Execution::Sequential).unwrap();
            let par = predict_batch(&m, &pts, mode, Execution::Parallel).unwrap();
            assert_eq!(seq, par);
            let single = match mode {
                PredictMode::Exact => predict_exact(&m, &pts[2..4]).unwrap(),
                PredictMode::Nearest(k) => predict_nn(&m, &pts[2..4], k).unwrap(),
            };
            assert_eq!(seq[1], single);
        }
        assert!(predict_batch(&m, &pts[..5], PredictMode::Exact, Execution::Sequential).is_err());
    }

    #[test]
    fn interval_uses_t_quantile() {
        let r = PredictiveResult { mean: vec![1.0], scale2: vec![4.0], dof: 10, c_star_star: 0.5 };
        let (lo, hi) = r.interval(0.95).unwrap()[0];
        // t_{0.975, 10} = 2.228138852
        assert!((hi - 1.0 - 2.0 * 2.228138852).abs() < 1e-8);
        assert!((1.0 - lo - (hi - 1.0)).abs() < 1e-12);
        assert!(r.interval(1.0).is_err());
    }

    #[test]
    fn rmse_properties() {
        let truth = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(relative_rmse(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.3).collect();
        let rms = (truth.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((relative_rmse(&shifted, &truth).unwrap() - 0.3 / rms).abs() < 1e-15);
        let s = 7.5;
        let ts: Vec<f64> = truth.iter().map(|v| v * s).collect();
        let ps: Vec<f64> = shifted.iter().map(|v| v * s).collect();
        assert!((relative_rmse(&ps, &ts).unwrap() - relative_rmse(&shifted, &truth).unwrap()).abs() < 1e-14);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn point_dimension_is_checked() {
        let m = model(20, 1, TrendBasis::Constant, 11);
        assert!(matches!(predict_exact(&m, &[0.5]), Err(Error::Shape(_))));
    }
}

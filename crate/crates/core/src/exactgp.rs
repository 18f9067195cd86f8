//! Exact marginal posterior using a single factorization of the full
//! correlation matrix. Serves as the reference for the Vecchia path.

use nalgebra::DMatrix;

use crate::design::{correlation_matrix, DesignMatrix, OutputMatrix};
use crate::error::{Error, Result};
use crate::fitting::prior::PriorSpec;
use crate::kernels::KernelSpec;
use crate::linalg::JitteredCholesky;
use crate::trend::TrendBasis;
use crate::vecchia::EvalOptions;

#[derive(Debug, Clone)]
pub struct ExactEval {
    pub neg2log: f64,
    /// Gradient in `(λ_1, …, λ_p[, ν²])` when requested.
    pub grad: Option<Vec<f64>>,
    pub s2: Vec<f64>,
    /// `q × k` generalized least squares coefficients.
    pub beta: DMatrix<f64>,
    /// Factor of `R + ν²I`.
    pub factor: JitteredCholesky,
    pub log_det_r: f64,
    pub log_det_sigma: f64,
    pub prior_neg2log: f64,
}

/// Training data held in the layout the dense computations want.
#[derive(Debug, Clone)]
pub struct ExactProblem {
    design: DesignMatrix,
    h: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl ExactProblem {
    pub fn new(design: &DesignMatrix, outputs: &OutputMatrix, trend: TrendBasis) -> Result<Self> {
        let n = design.nrows();
        let p = design.ncols();
        let q = trend.q(p);
        if outputs.nrows() != n {
            return Err(Error::shape(format!("{} output rows for {n} design rows", outputs.nrows())));
        }
        if outputs.ncols() == 0 {
            return Err(Error::shape("output matrix has no columns"));
        }
        if n <= q {
            return Err(Error::invalid(format!("need more points than trend terms, got n={n}, q={q}")));
        }
        let h = DMatrix::from_row_slice(n, q, &trend.matrix(design.as_slice(), p));
        Ok(Self { design: design.clone(), h, y: outputs.to_dmatrix() })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn q(&self) -> usize {
        self.h.ncols()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    /// `R + ν²I`.
    pub fn correlation(&self, spec: &KernelSpec) -> DMatrix<f64> {
        let mut r = correlation_matrix(spec, &self.design);
        for i in 0..self.n() {
            r[(i, i)] += spec.nugget;
        }
        r
    }

    pub fn factorize(&self, spec: &KernelSpec) -> Result<JitteredCholesky> {
        if spec.dim() != self.design.ncols() {
            return Err(Error::shape(format!(
                "kernel has {} ranges for {} inputs",
                spec.dim(),
                self.design.ncols()
            )));
        }
        spec.validate()?;
        JitteredCholesky::new(&self.correlation(spec)).ok_or_else(|| Error::Conditioning {
            point: None,
            reason: "correlation matrix not positive definite after jitter".into(),
        })
    }

    pub fn evaluate(&self, spec: &KernelSpec, prior: &PriorSpec, opts: EvalOptions) -> Result<ExactEval> {
        let n = self.n();
        let q = self.q();
        let k = self.k();
        let factor = self.factorize(spec)?;
        let g = factor.chol.solve(&self.h);
        let sigma = self.h.tr_mul(&g);
        let (sigma_chol, log_det_sigma) = if q == 0 {
            (None, 0.0)
        } else {
            let c = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Rank("trend information matrix is not positive definite".into()))?;
            let ld = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (Some(c), ld)
        };
        let ri_y = factor.chol.solve(&self.y);
        let ht_ri_y = self.h.tr_mul(&ri_y);
        let beta = match &sigma_chol {
            Some(c) => c.solve(&ht_ri_y),
            None => DMatrix::zeros(0, k),
        };
        let s2: Vec<f64> = (0..k)
            .map(|l| {
                self.y.column(l).dot(&ri_y.column(l)) - ht_ri_y.column(l).dot(&beta.column(l))
            })
            .collect();
        if let Some(l) = (0..k).position(|l| !(s2[l] > 0.0 && s2[l].is_finite())) {
            return Err(Error::DegenerateData(format!(
                "residual quadratic form {} for output column {l} is not positive",
                s2[l]
            )));
        }
        let log_det_r = factor.log_det();
        let dof = (n - q) as f64;
        let kf = k as f64;
        let nugget = opts.estimate_nugget.then_some(spec.nugget);
        let (prior_value, prior_grad) = prior.neg2log(&spec.ranges, nugget)?;
        let neg2log = dof * s2.iter().map(|v| v.ln()).sum::<f64>() + kf * log_det_r + kf * log_det_sigma + prior_value;

        let grad = if opts.gradient {
            // d(neg2log) = Σ_ab M_ab dR_ab with
            // M = k R⁻¹ - k G Σ⁻¹ Gᵀ - (n-q) Σ_l α_l α_lᵀ / S²_l
            let mut m = factor.inverse() * kf;
            if let Some(c) = &sigma_chol {
                let sg = c.solve(&g.transpose());
                m.gemm(-kf, &g, &sg, 1.0);
            }
            let alpha = &ri_y - &g * &beta;
            let mut scaled = alpha.clone();
            for (l, mut col) in scaled.column_iter_mut().enumerate() {
                col *= dof / s2[l];
            }
            m.gemm(-1.0, &alpha, &scaled.transpose(), 1.0);
            let p = spec.dim();
            let mut grad = vec![0.0; p];
            let mut dlog = vec![0.0; p];
            for b in 0..n {
                let xb = self.design.row(b);
                for a in b + 1..n {
                    let c = spec.corr_dlog(self.design.row(a), xb, &mut dlog);
                    let weight = (m[(a, b)] + m[(b, a)]) * c;
                    for (gj, dl) in grad.iter_mut().zip(&dlog) {
                        *gj += weight * dl;
                    }
                }
            }
            if opts.estimate_nugget {
                grad.push(m.trace());
            }
            for (gj, pj) in grad.iter_mut().zip(&prior_grad) {
                *gj += pj;
            }
            Some(grad)
        } else {
            None
        };

        Ok(ExactEval { neg2log, grad, s2, beta, factor, log_det_r, log_det_sigma, prior_neg2log: prior_value })
    }
}

/// Exact marginal posterior of `outputs` on `design`.
pub fn exact_marginal_neg2log(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    spec: &KernelSpec,
    trend: TrendBasis,
    prior: &PriorSpec,
    opts: EvalOptions,
) -> Result<ExactEval> {
    ExactProblem::new(design, outputs, trend)?.evaluate(spec, prior, opts)
}

/// Generalized least squares trend coefficients, one column per output.
pub fn gls_beta(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    spec: &KernelSpec,
    trend: TrendBasis,
) -> Result<DMatrix<f64>> {
    let prob = ExactProblem::new(design, outputs, trend)?;
    let factor = prob.factorize(spec)?;
    gls_from_factor(&prob.h, &prob.y, &factor)
}

fn gls_from_factor(h: &DMatrix<f64>, y: &DMatrix<f64>, factor: &JitteredCholesky) -> Result<DMatrix<f64>> {
    if h.ncols() == 0 {
        return Ok(DMatrix::zeros(0, y.ncols()));
    }
    let g = factor.chol.solve(h);
    let sigma = h.tr_mul(&g);
    let c = sigma
        .cholesky()
        .ok_or_else(|| Error::Rank("trend information matrix is not positive definite".into()))?;
    Ok(c.solve(&g.tr_mul(y)))
}

/// Per-output variance estimates `(y - Hβ)ᵀ R̃⁻¹ (y - Hβ) / (n - q)`.
///
/// Values within roundoff of zero are returned as exactly zero.
pub fn sigma2_hat(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    spec: &KernelSpec,
    trend: TrendBasis,
    beta: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let prob = ExactProblem::new(design, outputs, trend)?;
    if beta.nrows() != prob.q() || beta.ncols() != prob.k() {
        return Err(Error::shape(format!(
            "beta is {}×{}, expected {}×{}",
            beta.nrows(),
            beta.ncols(),
            prob.q(),
            prob.k()
        )));
    }
    let factor = prob.factorize(spec)?;
    Ok(sigma2_from_factor(&prob.h, &prob.y, &factor, beta))
}

fn sigma2_from_factor(h: &DMatrix<f64>, y: &DMatrix<f64>, factor: &JitteredCholesky, beta: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows();
    let q = h.ncols();
    let resid = y - h * beta;
    let solved = factor.chol.solve(&resid);
    (0..y.ncols())
        .map(|l| {
            let v = resid.column(l).dot(&solved.column(l)) / (n - q) as f64;
            if v.abs() <= 64.0 * f64::EPSILON * y.column(l).norm_squared() {
                0.0
            } else {
                v.max(0.0)
            }
        })
        .collect()
}

/// `β̂` and `σ̂²` from one factorization.
pub fn gls_estimates(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    spec: &KernelSpec,
    trend: TrendBasis,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let prob = ExactProblem::new(design, outputs, trend)?;
    let factor = prob.factorize(spec)?;
    let beta = gls_from_factor(&prob.h, &prob.y, &factor)?;
    let s2 = sigma2_from_factor(&prob.h, &prob.y, &factor, &beta);
    Ok((beta, s2))
}

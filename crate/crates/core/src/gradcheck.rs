//! Analytic gradient of the Vecchia marginal posterior against central
//! finite differences on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{lhs_sample, sample_gp, OutputMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fitting::PriorSpec;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::ordering::{build_plan, default_scale, Anchor};
use crate::trend::TrendBasis;
use crate::vecchia::{EvalOptions, VecchiaProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub instances: usize,
    /// Largest design size drawn.
    pub n_max: usize,
    /// Finite-difference step relative to each parameter.
    pub rel_step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { instances: 100, n_max: 100, rel_step: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub family: KernelFamily,
    pub trend: TrendBasis,
    pub nugget: f64,
    /// `‖analytic - fd‖∞ / max(‖fd‖∞, 1)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
    pub max_rel_error: f64,
}

const FAMILIES: [KernelFamily; 4] = [
    KernelFamily::Matern32,
    KernelFamily::Matern52,
    KernelFamily::PowerExponential { alpha: 1.0 },
    KernelFamily::PowerExponential { alpha: 1.9 },
];

/// Runs the check with conditioning sizes cycling through `3`, `10` and `n - 1`.
pub fn gradient_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.instances == 0 {
        return Err(Error::invalid("at least one instance is required"));
    }
    if config.n_max < 12 {
        return Err(Error::invalid(format!("n_max = {} is below the minimum of 12", config.n_max)));
    }
    if !(config.rel_step > 0.0 && config.rel_step < 1e-2) {
        return Err(Error::invalid(format!("relative step {} outside (0, 0.01)", config.rel_step)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::with_capacity(config.instances);
    for c in 0..config.instances {
        let p = rng.random_range(1..=4);
        let trend = if rng.random_bool(0.5) { TrendBasis::Constant } else { TrendBasis::Linear };
        let n = rng.random_range(12..=config.n_max);
        let m = [3, 10, n - 1][c % 3];
        let family = FAMILIES[c % FAMILIES.len()];
        let design = lhs_sample(n, p, rng.random())?;
        let spacing = (n as f64).powf(-1.0 / p as f64);
        let ranges: Vec<f64> = (0..p).map(|_| spacing * rng.random_range(0.8..2.5)).collect();
        let nugget = if rng.random_bool(0.3) { rng.random_range(1e-3..0.1) } else { 0.0 };
        let k = rng.random_range(1..=3);
        let truth = KernelSpec::new(KernelFamily::Matern52, vec![0.4; p], 0.0)?;
        let field = sample_gp(&design, &truth, 1.0, k, rng.random())?;
        let outputs = OutputMatrix::new(
            n,
            k,
            field.as_slice().iter().enumerate().map(|(i, v)| v + design.row(i / k)[0]).collect(),
        )?;
        let plan = build_plan(&design, m, &default_scale(&design)?, Anchor::Centroid, Execution::default())?;
        let problem = VecchiaProblem::new(&design, &outputs, &plan, trend, Execution::default())?;
        let prior = PriorSpec::jointly_robust(&design)?;
        let with_nugget = nugget > 0.0;
        let mut theta = ranges.clone();
        if with_nugget {
            theta.push(nugget);
        }
        let spec_at = |t: &[f64]| KernelSpec::new(family, t[..p].to_vec(), if with_nugget { t[p] } else { 0.0 });
        let analytic = problem
            .evaluate(&spec_at(&theta)?, &prior, EvalOptions::with_gradient(with_nugget))?
            .grad
            .expect("gradient requested");
        let opts = EvalOptions { gradient: false, estimate_nugget: with_nugget };
        let mut diff = 0.0f64;
        let mut scale = 1.0f64;
        for j in 0..theta.len() {
            let h = config.rel_step * theta[j];
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (problem.evaluate(&spec_at(&up)?, &prior, opts)?.neg2log
                - problem.evaluate(&spec_at(&dn)?, &prior, opts)?.neg2log)
                / (2.0 * h);
            diff = diff.max((analytic[j] - fd).abs());
            scale = scale.max(fd.abs());
        }
        cases.push(GradCheckCase { n, p, m, family, trend, nugget, rel_error: diff / scale });
    }
    let max_rel_error = cases.iter().fold(0.0f64, |a, c| a.max(c.rel_error));
    Ok(GradCheckReport { cases, max_rel_error })
}

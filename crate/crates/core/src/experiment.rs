//! Synthetic GP experiments: data generation and timed fit/predict runs.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{lhs_sample, sample_gp, DesignMatrix, OutputMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fitting::{fit, FitOptions, FittedEmulator, Method};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::predict::{predict_batch, relative_rmse, rmse, PredictMode};
use crate::trend::TrendBasis;

/// Range parameters of the four-input synthetic benchmark.
pub const SYNTHETIC_RANGES: [f64; 4] = [0.5, 0.8, 1.2, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    pub ranges: Vec<f64>,
    pub family: KernelFamily,
    pub sigma2: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Matérn 3/2 field with the benchmark ranges and unit variance.
    pub fn benchmark(n_train: usize, n_test: usize, k: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_test,
            k,
            ranges: SYNTHETIC_RANGES.to_vec(),
            family: KernelFamily::Matern32,
            sigma2: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train_x: DesignMatrix,
    pub train_y: OutputMatrix,
    pub test_x: DesignMatrix,
    pub test_y: OutputMatrix,
    /// Rows of the joint sample that went to each split.
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Draws one Latin hypercube of `n_train + n_test` points, samples the GP
/// jointly and splits the rows at random.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.n_train == 0 || config.n_test == 0 {
        return Err(Error::invalid("both splits need at least one point"));
    }
    let total = config.n_train + config.n_test;
    let p = config.ranges.len();
    let spec = KernelSpec::new(config.family, config.ranges.clone(), 0.0)?;
    let design = lhs_sample(total, p, config.seed)?;
    let outputs = sample_gp(&design, &spec, config.sigma2, config.k, config.seed.wrapping_add(1))?;
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)));
    let mut train_idx = perm[..config.n_train].to_vec();
    let mut test_idx = perm[config.n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SyntheticData {
        train_x: design.select_rows(&train_idx)?,
        train_y: outputs.select_rows(&train_idx)?,
        test_x: design.select_rows(&test_idx)?,
        test_y: outputs.select_rows(&test_idx)?,
        train_idx,
        test_idx,
    })
}

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: Option<usize>,
    pub k: usize,
    pub method: String,
    pub fit_time_s: f64,
    pub predict_time_s: f64,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub ranges: Vec<f64>,
    pub converged: bool,
}

/// Outcome of [`run_config`], keeping the model for further inspection.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: BenchRow,
    pub model: FittedEmulator,
    /// Predictive means, row-major `n_test × k`.
    pub predictions: Vec<f64>,
}

/// Fits on the training split and predicts the test split, timing both
/// library calls.
pub fn run_config(
    data: &SyntheticData,
    family: KernelFamily,
    trend: TrendBasis,
    options: &FitOptions,
    mode: PredictMode,
    exec: Execution,
) -> Result<RunOutcome> {
    let t0 = Instant::now();
    let model = fit(&data.train_x, &data.train_y, family, trend, options)?;
    let fit_time_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let preds = predict_batch(&model, data.test_x.as_slice(), mode, exec)?;
    let predict_time_s = t1.elapsed().as_secs_f64();
    let predictions: Vec<f64> = preds.iter().flat_map(|r| r.mean.iter().copied()).collect();
    let truth = data.test_y.as_slice();
    let row = BenchRow {
        n: data.train_x.nrows(),
        m: match options.method {
            Method::Vecchia { m } => Some(m),
            Method::Exact => None,
        },
        k: data.train_y.ncols(),
        method: match options.method {
            Method::Vecchia { .. } => "vecchia".into(),
            Method::Exact => "exact".into(),
        },
        fit_time_s,
        predict_time_s,
        rmse: rmse(&predictions, truth)?,
        relative_rmse: relative_rmse(&predictions, truth)?,
        ranges: model.spec().ranges.clone(),
        converged: model.params().diagnostics.converged,
    };
    Ok(RunOutcome { row, model, predictions })
}

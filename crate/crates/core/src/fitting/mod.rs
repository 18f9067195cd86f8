//! Range estimation by marginal posterior maximization, and the fitted model.

pub mod lbfgs;
pub mod prior;

use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, OutputMatrix};
use crate::error::{Error, Result};
use crate::exactgp::{gls_estimates, ExactProblem};
use crate::exec::Execution;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::ordering::{build_plan, default_scale, Anchor, ConditioningPlan};
use crate::trend::TrendBasis;
use crate::vecchia::{EvalOptions, VecchiaProblem};

pub use lbfgs::{optimize, OptOptions, OptState, SeedReport, Status};
pub use prior::{jr_prior_neg2log, PriorSpec};

/// Likelihood used to estimate the ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Vecchia { m: usize },
    Exact,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Vecchia { m } => write!(f, "vecchia(m={m})"),
            Method::Exact => write!(f, "exact"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum PriorChoice {
    /// Jointly robust prior with default hyperparameters for the design.
    #[default]
    JointlyRobust,
    Flat,
    Custom(PriorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: Method,
    pub prior: PriorChoice,
    /// Nugget ratio; the starting value when `estimate_nugget` is set.
    pub nugget: f64,
    pub estimate_nugget: bool,
    /// Number of plan builds. Each rebuild uses the previous range estimate as scale.
    pub scaling_rounds: usize,
    /// Largest `n` for which `β̂` and `σ̂²` use the exact formulas.
    pub exact_threshold: usize,
    pub optimizer: OptOptions,
    /// Share of output columns used while estimating the ranges.
    pub output_fraction: f64,
    pub subsample_seed: u64,
    pub anchor: Anchor,
    pub exec: Execution,
    /// Fail when no seed of the final round converged.
    pub require_convergence: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Vecchia { m: 30 },
            prior: PriorChoice::JointlyRobust,
            nugget: 0.0,
            estimate_nugget: false,
            scaling_rounds: 2,
            exact_threshold: 4000,
            optimizer: OptOptions::default(),
            output_fraction: 1.0,
            subsample_seed: 0,
            anchor: Anchor::Centroid,
            exec: Execution::default(),
            require_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Scale used to build the plan of this round.
    pub scale: Vec<f64>,
    pub seeds: Vec<SeedReport>,
    pub best_ranges: Vec<f64>,
    pub neg2log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rounds: Vec<RoundReport>,
    pub neg2log: f64,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Output columns used for range estimation.
    pub estimation_columns: Vec<usize>,
    /// Whether `β̂` and `σ̂²` came from the exact formulas.
    pub exact_estimates: bool,
}

/// Everything a fit produces apart from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorParams {
    pub spec: KernelSpec,
    pub trend: TrendBasis,
    /// Row-major `q × k`.
    pub beta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub dof: usize,
    pub method: Method,
    /// Raw-unit `(min, max)` of each input, used to normalize new inputs.
    pub bounds: Vec<(f64, f64)>,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub prior: PriorSpec,
    pub diagnostics: FitDiagnostics,
}

/// Fitted emulator: parameters plus the normalized training data.
#[derive(Debug, Clone)]
pub struct FittedEmulator {
    params: EmulatorParams,
    design: DesignMatrix,
    outputs: OutputMatrix,
    plan: Option<ConditioningPlan>,
}

impl FittedEmulator {
    /// Reassembles a model from saved parameters and the raw training data.
    pub fn from_parts(params: EmulatorParams, raw_design: &DesignMatrix, outputs: OutputMatrix) -> Result<Self> {
        if raw_design.nrows() != params.n || raw_design.ncols() != params.p {
            return Err(Error::shape(format!(
                "training design is {}×{}, model expects {}×{}",
                raw_design.nrows(),
                raw_design.ncols(),
                params.n,
                params.p
            )));
        }
        if outputs.nrows() != params.n || outputs.ncols() != params.k {
            return Err(Error::shape(format!(
                "training outputs are {}×{}, model expects {}×{}",
                outputs.nrows(),
                outputs.ncols(),
                params.n,
                params.k
            )));
        }
        let q = params.trend.q(params.p);
        if params.beta.len() != q * params.k || params.sigma2.len() != params.k {
            return Err(Error::shape("trend coefficients or variances do not match the model size"));
        }
        params.spec.validate()?;
        let design = raw_design.normalize_with(&params.bounds)?;
        Ok(Self { params, design, outputs, plan: None })
    }

    pub fn params(&self) -> &EmulatorParams {
        &self.params
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.params.spec
    }

    pub fn trend(&self) -> TrendBasis {
        self.params.trend
    }

    /// Training inputs in normalized units.
    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn outputs(&self) -> &OutputMatrix {
        &self.outputs
    }

    pub fn plan(&self) -> Option<&ConditioningPlan> {
        self.plan.as_ref()
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn p(&self) -> usize {
        self.params.p
    }

    pub fn q(&self) -> usize {
        self.params.trend.q(self.params.p)
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn dof(&self) -> usize {
        self.params.dof
    }

    pub fn beta(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.q(), self.k(), &self.params.beta)
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.params.sigma2
    }

    /// Raw-unit point mapped into the normalized training space.
    pub fn normalize_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p() {
            return Err(Error::shape(format!("point has {} inputs, model expects {}", x.len(), self.p())));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite input {v}")));
        }
        let mut out = x.to_vec();
        crate::design::normalize_in_place(&mut out, &self.params.bounds);
        Ok(out)
    }
}

/// Seeded subset of `fraction · k` output columns, in ascending order.
pub fn subsample_outputs(k: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("output fraction {fraction} must lie in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok((0..k).collect());
    }
    let count = (k as f64 * fraction).round() as usize;
    if count == 0 {
        return Err(Error::invalid(format!("fraction {fraction} of {k} outputs selects no columns")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = rand::seq::index::sample(&mut rng, k, count).into_vec();
    cols.sort_unstable();
    Ok(cols)
}

enum Backend {
    Vecchia(VecchiaProblem),
    Exact(ExactProblem),
}

/// Objective in `ξ = (-log λ_1, …, -log λ_p[, log ν²])`.
struct Objective<'a> {
    backend: &'a Backend,
    family: KernelFamily,
    prior: &'a PriorSpec,
    nugget: f64,
    estimate_nugget: bool,
}

impl Objective<'_> {
    fn spec(&self, xi: &[f64]) -> KernelSpec {
        let p = self.prior_dim(xi);
        KernelSpec {
            family: self.family,
            ranges: xi[..p].iter().map(|v| (-v).exp()).collect(),
            nugget: if self.estimate_nugget { xi[p].exp() } else { self.nugget },
        }
    }

    fn prior_dim(&self, xi: &[f64]) -> usize {
        xi.len() - usize::from(self.estimate_nugget)
    }

    fn eval(&self, xi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = self.spec(xi);
        let opts = EvalOptions::with_gradient(self.estimate_nugget);
        let (f, g) = match self.backend {
            Backend::Vecchia(v) => {
                let e = v.evaluate(&spec, self.prior, opts)?;
                (e.neg2log, e.grad.unwrap_or_default())
            }
            Backend::Exact(x) => {
                let e = x.evaluate(&spec, self.prior, opts)?;
                (e.neg2log, e.grad.unwrap_or_default())
            }
        };
        let p = self.prior_dim(xi);
        let mut gx: Vec<f64> = g[..p].iter().zip(&spec.ranges).map(|(g, l)| -g * l).collect();
        if self.estimate_nugget {
            gx.push(g[p] * spec.nugget);
        }
        Ok((f, gx))
    }
}

/// Fits an emulator to raw-unit `design` and `outputs`.
pub fn fit(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    family: KernelFamily,
    trend: TrendBasis,
    options: &FitOptions,
) -> Result<FittedEmulator> {
    let start = Instant::now();
    family.validate()?;
    let n = design.nrows();
    let p = design.ncols();
    let q = trend.q(p);
    let k = outputs.ncols();
    if outputs.nrows() != n {
        return Err(Error::shape(format!("{} output rows for {n} design rows", outputs.nrows())));
    }
    if n <= q {
        return Err(Error::invalid(format!("need more points than trend terms, got n={n}, q={q}")));
    }
    if let Method::Vecchia { m } = options.method {
        if m < 1 || m >= n {
            return Err(Error::invalid(format!("conditioning size m = {m} must satisfy 1 <= m <= n - 1 = {}", n - 1)));
        }
    }
    if options.scaling_rounds == 0 {
        return Err(Error::invalid("at least one scaling round is required"));
    }
    if !(options.nugget.is_finite() && options.nugget >= 0.0) {
        return Err(Error::invalid(format!("nugget ratio {} must be nonnegative", options.nugget)));
    }
    let dn = design.normalize()?;
    let prior = match &options.prior {
        PriorChoice::JointlyRobust => PriorSpec::jointly_robust(&dn)?,
        PriorChoice::Flat => PriorSpec::None,
        PriorChoice::Custom(s) => s.clone(),
    };
    prior.validate(p)?;
    let columns = subsample_outputs(k, options.output_fraction, options.subsample_seed)?;
    let est_outputs = if columns.len() == k { outputs.clone() } else { outputs.select_columns(&columns)? };

    // seeds are set relative to the typical pairwise spacing of each input
    let spacing = match PriorSpec::jointly_robust(&dn)? {
        PriorSpec::JointlyRobust { c, .. } => c,
        PriorSpec::None => unreachable!(),
    };
    let nugget_start = if options.nugget > 0.0 { options.nugget } else { 1e-4 };
    let seed_at = |factor: f64| {
        let mut xi: Vec<f64> = spacing.iter().map(|c| -(factor * c).ln()).collect();
        if options.estimate_nugget {
            xi.push(nugget_start.ln());
        }
        xi
    };
    let mut seeds = vec![seed_at(0.5), seed_at(50.0)];

    let rounds = match options.method {
        Method::Vecchia { .. } => options.scaling_rounds,
        Method::Exact => 1,
    };
    let mut scale = default_scale(&dn)?;
    let mut reports = Vec::with_capacity(rounds);
    let mut best: Option<OptState> = None;
    let mut plan = None;
    let mut final_converged = false;
    for round in 0..rounds {
        let backend = match options.method {
            Method::Vecchia { m } => {
                let pl = build_plan(&dn, m, &scale, options.anchor, options.exec)?;
                let prob = VecchiaProblem::new(&dn, &est_outputs, &pl, trend, options.exec)?;
                plan = Some(pl);
                Backend::Vecchia(prob)
            }
            Method::Exact => Backend::Exact(ExactProblem::new(&dn, &est_outputs, trend)?),
        };
        let objective = Objective {
            backend: &backend,
            family,
            prior: &prior,
            nugget: options.nugget,
            estimate_nugget: options.estimate_nugget,
        };
        let (state, seed_reports) = optimize(|xi: &[f64]| objective.eval(xi), &seeds, &options.optimizer)?;
        final_converged = seed_reports.iter().any(|r| r.state.as_ref().is_some_and(|s| s.status.converged()));
        if !final_converged {
            warn!("round {round}: no seed converged");
        }
        let ranges = objective.spec(&state.x).ranges;
        info!("round {round}: neg2log = {:.8e}, ranges = {ranges:?}", state.f);
        reports.push(RoundReport { scale: scale.clone(), seeds: seed_reports, best_ranges: ranges.clone(), neg2log: state.f });
        scale = ranges;
        seeds = vec![state.x.clone()];
        best = Some(state);
    }
    let best = best.expect("at least one round ran");
    if options.require_convergence && !final_converged {
        let statuses: Vec<String> = reports
            .last()
            .map(|r| {
                r.seeds
                    .iter()
                    .map(|s| match (&s.state, &s.error) {
                        (Some(st), _) => format!("{:?} after {} iterations", st.status, st.iterations),
                        (None, Some(e)) => e.clone(),
                        (None, None) => "no result".into(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        return Err(Error::Fit(format!("no seed converged: {}", statuses.join("; "))));
    }

    let nugget = if options.estimate_nugget { best.x[p].exp() } else { options.nugget };
    let spec = KernelSpec::new(family, best.x[..p].iter().map(|v| (-v).exp()).collect(), nugget)?;
    let exact_estimates = n <= options.exact_threshold || plan.is_none();
    let (beta, sigma2) = if exact_estimates {
        let (b, s) = gls_estimates(&dn, outputs, &spec, trend)?;
        (b, s)
    } else {
        let pl = plan.as_ref().expect("vecchia fit has a plan");
        let prob = VecchiaProblem::new(&dn, outputs, pl, trend, options.exec)?;
        let e = prob.evaluate(&spec, &prior, EvalOptions { gradient: false, estimate_nugget: options.estimate_nugget })?;
        let s2 = e.s2.iter().map(|s| s / (n - q) as f64).collect();
        (e.mu, s2)
    };
    let mut beta_rows = Vec::with_capacity(q * k);
    for a in 0..q {
        beta_rows.extend(beta.row(a).iter());
    }

    let diagnostics = FitDiagnostics {
        rounds: reports,
        neg2log: best.f,
        converged: final_converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        estimation_columns: columns,
        exact_estimates,
    };
    let params = EmulatorParams {
        spec,
        trend,
        beta: beta_rows,
        sigma2,
        dof: n - q,
        method: options.method,
        bounds: dn.bounds().to_vec(),
        n,
        p,
        k,
        prior,
        diagnostics,
    };
    Ok(FittedEmulator { params, design: dn, outputs: outputs.clone(), plan })
}

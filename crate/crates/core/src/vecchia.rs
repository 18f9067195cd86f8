//! Vecchia marginal likelihood with the trend and variance integrated out.
//!
//! Each ordered point contributes a conditional variance ratio `ω`, a
//! conditioned trend row `h̃` and conditioned outputs `g`. The likelihood only
//! needs running sums of these, so evaluation streams over fixed chunks of
//! points and never stores the per-point terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, OutputMatrix};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::fitting::prior::PriorSpec;
use crate::kernels::KernelSpec;
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place, JITTER_SCHEDULE};
use crate::ordering::ConditioningPlan;
use crate::trend::TrendBasis;

/// Points per reduction chunk. Fixed so that sums do not depend on threading.
const CHUNK: usize = 64;

/// Smallest accepted `ω` relative to `1 + ν²`.
const OMEGA_FLOOR: f64 = 1e-13;

/// What an evaluation should compute besides the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Return the gradient in `(λ_1, …, λ_p[, ν²])`.
    pub gradient: bool,
    /// Treat `ν²` as a free parameter: it gets a gradient entry and enters the prior.
    pub estimate_nugget: bool,
}

impl EvalOptions {
    pub fn value_only() -> Self {
        Self::default()
    }

    pub fn with_gradient(estimate_nugget: bool) -> Self {
        Self { gradient: true, estimate_nugget }
    }

    fn n_derivs(&self, p: usize) -> usize {
        if self.gradient {
            p + usize::from(self.estimate_nugget)
        } else {
            0
        }
    }
}

/// Terms of one ordered point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFactor {
    pub omega: f64,
    /// Kriging weights on the conditioning set, in neighbour order.
    pub weights: Vec<f64>,
    pub h_tilde: Vec<f64>,
    /// One conditioned residual per output column.
    pub g: Vec<f64>,
    /// Diagonal jitter that was needed for this point (0 when none).
    pub jitter: f64,
}

/// Per-point terms for a whole conditioning plan, in ordered sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VecchiaFactors {
    pub points: Vec<PointFactor>,
    pub q: usize,
    pub k: usize,
    pub spec: KernelSpec,
}

/// Result of one marginal posterior evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEval {
    /// `-2 log` marginal posterior up to an additive constant.
    pub neg2log: f64,
    /// Gradient in `(λ_1, …, λ_p[, ν²])` when requested.
    pub grad: Option<Vec<f64>>,
    pub s2: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// `q × k` conditional trend means.
    pub mu: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub sum_log_omega: f64,
    pub prior_neg2log: f64,
}

/// Ordered data and neighbour sets, ready for repeated evaluation at new kernels.
#[derive(Debug, Clone)]
pub struct VecchiaProblem {
    n: usize,
    p: usize,
    q: usize,
    k: usize,
    x: Vec<f64>,
    h: Vec<f64>,
    y: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    exec: Execution,
}

impl VecchiaProblem {
    pub fn new(
        design: &DesignMatrix,
        outputs: &OutputMatrix,
        plan: &ConditioningPlan,
        trend: TrendBasis,
        exec: Execution,
    ) -> Result<Self> {
        let n = design.nrows();
        let p = design.ncols();
        let q = trend.q(p);
        let k = outputs.ncols();
        if outputs.nrows() != n {
            return Err(Error::shape(format!("{} output rows for {n} design rows", outputs.nrows())));
        }
        if k == 0 {
            return Err(Error::shape("output matrix has no columns"));
        }
        if n <= q {
            return Err(Error::invalid(format!("need more points than trend terms, got n={n}, q={q}")));
        }
        plan.validate(n)?;
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n * k);
        for &o in &plan.order {
            x.extend_from_slice(design.row(o));
            y.extend_from_slice(outputs.row(o));
        }
        let h = trend.matrix(&x, p);
        Ok(Self { n, p, q, k, x, h, y, neighbors: plan.neighbors.clone(), exec })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    fn check_spec(&self, spec: &KernelSpec) -> Result<()> {
        spec.validate()?;
        if spec.dim() != self.p {
            return Err(Error::shape(format!("kernel has {} ranges for {} inputs", spec.dim(), self.p)));
        }
        Ok(())
    }

    /// Per-point factors without derivatives.
    pub fn factors(&self, spec: &KernelSpec) -> Result<VecchiaFactors> {
        self.check_spec(spec)?;
        let points = try_map_indexed(self.exec, self.n, |i| {
            let mut ws = Workspace::new(self, self.neighbors[i].len(), 0);
            let mut t = PointTerms::new(self.q, self.k, 0);
            self.point_terms(i, spec, &mut ws, &mut t)?;
            Ok(PointFactor {
                omega: t.omega,
                weights: ws.w[..self.neighbors[i].len()].to_vec(),
                h_tilde: t.h,
                g: t.g,
                jitter: t.jitter,
            })
        })?;
        Ok(VecchiaFactors { points, q: self.q, k: self.k, spec: spec.clone() })
    }

    /// Marginal posterior value and optionally its gradient.
    pub fn evaluate(&self, spec: &KernelSpec, prior: &PriorSpec, opts: EvalOptions) -> Result<MarginalEval> {
        self.check_spec(spec)?;
        let nd = opts.n_derivs(self.p);
        let chunks = self.n.div_ceil(CHUNK);
        let m_max = self.neighbors.iter().map(Vec::len).max().unwrap_or(0);
        let parts = try_map_indexed(self.exec, chunks, |c| {
            let mut ws = Workspace::new(self, m_max, nd);
            let mut t = PointTerms::new(self.q, self.k, nd);
            let mut acc = Moments::new(self.q, self.k, nd);
            for i in c * CHUNK..((c + 1) * CHUNK).min(self.n) {
                self.point_terms(i, spec, &mut ws, &mut t)?;
                acc.add(&t);
            }
            Ok::<_, Error>(acc)
        })?;
        let mut total = Moments::new(self.q, self.k, nd);
        for part in &parts {
            total.merge(part);
        }
        total.finalize(self.n, spec, prior, opts)
    }

    /// Fills `t` with the terms of ordered point `i` (and derivatives when
    /// `t` was sized for them).
    fn point_terms(&self, i: usize, spec: &KernelSpec, ws: &mut Workspace, t: &mut PointTerms) -> Result<()> {
        let (p, q, k) = (self.p, self.q, self.k);
        let nd = t.domega.len();
        let nb = &self.neighbors[i];
        let mi = nb.len();
        let nu2 = spec.nugget;
        let xi = &self.x[i * p..(i + 1) * p];
        t.h.copy_from_slice(&self.h[i * q..(i + 1) * q]);
        t.g.copy_from_slice(&self.y[i * k..(i + 1) * k]);
        t.dh.iter_mut().for_each(|v| *v = 0.0);
        t.dg.iter_mut().for_each(|v| *v = 0.0);
        t.domega.iter_mut().for_each(|v| *v = 0.0);
        t.jitter = 0.0;
        if mi == 0 {
            t.omega = 1.0 + nu2;
            if nd > p {
                t.domega[p] = 1.0;
            }
            return Ok(());
        }

        let xa = |a: usize| &self.x[nb[a] * p..(nb[a] + 1) * p];
        let with_d = nd > 0;
        for a in 0..mi {
            for b in 0..a {
                let c = if with_d {
                    spec.corr_dlog(xa(a), xa(b), &mut ws.dla[(a * mi + b) * p..(a * mi + b + 1) * p])
                } else {
                    spec.corr(xa(a), xa(b))
                };
                ws.ca[a * mi + b] = c;
                ws.ca[b * mi + a] = c;
            }
            ws.ca[a * mi + a] = 1.0;
            ws.r[a] = if with_d {
                spec.corr_dlog(xa(a), xi, &mut ws.dlr[a * p..(a + 1) * p])
            } else {
                spec.corr(xa(a), xi)
            };
        }

        let mut accepted = None;
        for delta in std::iter::once(0.0).chain(JITTER_SCHEDULE) {
            let l = &mut ws.l[..mi * mi];
            for a in 0..mi {
                for b in 0..=a {
                    l[a * mi + b] = ws.ca[a * mi + b];
                }
                l[a * mi + a] += nu2 + delta;
            }
            if !cholesky_in_place(l, mi) {
                continue;
            }
            let w = &mut ws.w[..mi];
            w.copy_from_slice(&ws.r[..mi]);
            cholesky_solve_in_place(l, mi, w);
            let rw: f64 = ws.r[..mi].iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let omega = 1.0 + nu2 + delta - rw;
            if omega > OMEGA_FLOOR * (1.0 + nu2) {
                accepted = Some((omega, delta));
                break;
            }
        }
        let Some((omega, delta)) = accepted else {
            return Err(Error::Conditioning {
                point: Some(i),
                reason: format!("conditional variance not positive with {mi} neighbours after jitter"),
            });
        };
        t.omega = omega;
        t.jitter = delta;

        let w = &ws.w[..mi];
        for (a, &wa) in w.iter().enumerate() {
            let o = nb[a];
            for (hv, hn) in t.h.iter_mut().zip(&self.h[o * q..(o + 1) * q]) {
                *hv -= wa * hn;
            }
            for (gv, yn) in t.g.iter_mut().zip(&self.y[o * k..(o + 1) * k]) {
                *gv -= wa * yn;
            }
        }
        if nd == 0 {
            return Ok(());
        }

        let l = &ws.l[..mi * mi];
        for j in 0..nd {
            let dw = &mut ws.dw[..mi];
            let domega;
            if j < p {
                // u = dr - dA w, with dA and dr from the log-derivatives
                let mut drw = 0.0;
                for a in 0..mi {
                    let dr = ws.r[a] * ws.dlr[a * p + j];
                    drw += dr * w[a];
                    let mut s = dr;
                    for b in 0..mi {
                        if b != a {
                            s -= ws.ca[a * mi + b] * ws.dla[(a.max(b) * mi + a.min(b)) * p + j] * w[b];
                        }
                    }
                    dw[a] = s;
                }
                let wu: f64 = w.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
                domega = -(drw + wu);
            } else {
                for (d, &wa) in dw.iter_mut().zip(w) {
                    *d = -wa;
                }
                domega = 1.0 + w.iter().map(|v| v * v).sum::<f64>();
            }
            cholesky_solve_in_place(l, mi, dw);
            t.domega[j] = domega;
            let dh = &mut t.dh[j * q..(j + 1) * q];
            let dg = &mut t.dg[j * k..(j + 1) * k];
            for (a, &da) in dw.iter().enumerate() {
                let o = nb[a];
                for (v, hn) in dh.iter_mut().zip(&self.h[o * q..(o + 1) * q]) {
                    *v -= da * hn;
                }
                for (v, yn) in dg.iter_mut().zip(&self.y[o * k..(o + 1) * k]) {
                    *v -= da * yn;
                }
            }
        }
        Ok(())
    }
}

impl VecchiaFactors {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Marginal posterior value from stored factors.
    pub fn marginal(&self, prior: &PriorSpec, estimate_nugget: bool) -> Result<MarginalEval> {
        let mut total = Moments::new(self.q, self.k, 0);
        let mut t = PointTerms::new(self.q, self.k, 0);
        for chunk in self.points.chunks(CHUNK) {
            let mut acc = Moments::new(self.q, self.k, 0);
            for pf in chunk {
                t.omega = pf.omega;
                t.h.copy_from_slice(&pf.h_tilde);
                t.g.copy_from_slice(&pf.g);
                acc.add(&t);
            }
            total.merge(&acc);
        }
        let opts = EvalOptions { gradient: false, estimate_nugget };
        total.finalize(self.n(), &self.spec, prior, opts)
    }

    /// Profiled objective `n σ²_m + Σ log ω` and `σ²_m` for a single output.
    ///
    /// `σ²_m` is formed from the residuals `g - h̃ᵀβ_m` directly, not from the
    /// integrated quadratic form.
    pub fn profiled_neg2log(&self) -> Result<(f64, f64)> {
        if self.k != 1 {
            return Err(Error::invalid(format!("profiled likelihood needs one output, got {}", self.k)));
        }
        let q = self.q;
        let n = self.n();
        let mut sigma = DMatrix::<f64>::zeros(q, q);
        let mut b = vec![0.0; q];
        for pf in &self.points {
            for a in 0..q {
                b[a] += pf.h_tilde[a] * pf.g[0] / pf.omega;
                for c in 0..q {
                    sigma[(a, c)] += pf.h_tilde[a] * pf.h_tilde[c] / pf.omega;
                }
            }
        }
        let beta = if q == 0 {
            Vec::new()
        } else {
            let chol = sigma
                .cholesky()
                .ok_or_else(|| Error::Rank("conditioned trend information is singular".into()))?;
            chol.solve(&DMatrix::from_column_slice(q, 1, &b)).as_slice().to_vec()
        };
        let mut ns2 = 0.0;
        let mut slo = 0.0;
        for pf in &self.points {
            let e = pf.g[0] - pf.h_tilde.iter().zip(&beta).map(|(h, b)| h * b).sum::<f64>();
            ns2 += e * e / pf.omega;
            slo += pf.omega.ln();
        }
        let s2m = ns2 / n as f64;
        Ok((n as f64 * s2m + slo, s2m))
    }
}

/// Computes the per-point factors for `design` under `plan`.
pub fn vecchia_factors(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    plan: &ConditioningPlan,
    spec: &KernelSpec,
    trend: TrendBasis,
) -> Result<VecchiaFactors> {
    VecchiaProblem::new(design, outputs, plan, trend, Execution::default())?.factors(spec)
}

struct Workspace {
    ca: Vec<f64>,
    dla: Vec<f64>,
    r: Vec<f64>,
    dlr: Vec<f64>,
    l: Vec<f64>,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl Workspace {
    fn new(problem: &VecchiaProblem, m: usize, nd: usize) -> Self {
        let p = problem.p;
        let dp = if nd > 0 { p } else { 0 };
        Self {
            ca: vec![0.0; m * m],
            dla: vec![0.0; m * m * dp],
            r: vec![0.0; m],
            dlr: vec![0.0; m * dp],
            l: vec![0.0; m * m],
            w: vec![0.0; m],
            dw: vec![0.0; m],
        }
    }
}

struct PointTerms {
    omega: f64,
    jitter: f64,
    h: Vec<f64>,
    g: Vec<f64>,
    domega: Vec<f64>,
    /// `nd × q`
    dh: Vec<f64>,
    /// `nd × k`
    dg: Vec<f64>,
}

impl PointTerms {
    fn new(q: usize, k: usize, nd: usize) -> Self {
        Self {
            omega: 1.0,
            jitter: 0.0,
            h: vec![0.0; q],
            g: vec![0.0; k],
            domega: vec![0.0; nd],
            dh: vec![0.0; nd * q],
            dg: vec![0.0; nd * k],
        }
    }
}

/// Running sums over points, with their derivatives.
#[derive(Debug, Clone)]
struct Moments {
    q: usize,
    k: usize,
    nd: usize,
    /// `q × q`, row-major
    sigma: Vec<f64>,
    /// `q × k`, row-major
    b: Vec<f64>,
    c: Vec<f64>,
    sum_log_omega: f64,
    d_log_omega: Vec<f64>,
    d_sigma: Vec<f64>,
    d_b: Vec<f64>,
    d_c: Vec<f64>,
}

impl Moments {
    fn new(q: usize, k: usize, nd: usize) -> Self {
        Self {
            q,
            k,
            nd,
            sigma: vec![0.0; q * q],
            b: vec![0.0; q * k],
            c: vec![0.0; k],
            sum_log_omega: 0.0,
            d_log_omega: vec![0.0; nd],
            d_sigma: vec![0.0; nd * q * q],
            d_b: vec![0.0; nd * q * k],
            d_c: vec![0.0; nd * k],
        }
    }

    fn add(&mut self, t: &PointTerms) {
        let (q, k) = (self.q, self.k);
        let inv = 1.0 / t.omega;
        for a in 0..q {
            let ha = t.h[a] * inv;
            for c in 0..q {
                self.sigma[a * q + c] += ha * t.h[c];
            }
            for (bv, g) in self.b[a * k..(a + 1) * k].iter_mut().zip(&t.g) {
                *bv += ha * g;
            }
        }
        for (cv, g) in self.c.iter_mut().zip(&t.g) {
            *cv += g * g * inv;
        }
        self.sum_log_omega += t.omega.ln();

        for j in 0..self.nd {
            let dom = t.domega[j];
            let dinv = -dom * inv * inv;
            let dh = &t.dh[j * q..(j + 1) * q];
            let dg = &t.dg[j * k..(j + 1) * k];
            self.d_log_omega[j] += dom * inv;
            let ds = &mut self.d_sigma[j * q * q..(j + 1) * q * q];
            let db = &mut self.d_b[j * q * k..(j + 1) * q * k];
            for a in 0..q {
                for c in 0..q {
                    ds[a * q + c] += (dh[a] * t.h[c] + t.h[a] * dh[c]) * inv + t.h[a] * t.h[c] * dinv;
                }
                for l in 0..k {
                    db[a * k + l] += (dh[a] * t.g[l] + t.h[a] * dg[l]) * inv + t.h[a] * t.g[l] * dinv;
                }
            }
            for (l, dc) in self.d_c[j * k..(j + 1) * k].iter_mut().enumerate() {
                *dc += 2.0 * t.g[l] * dg[l] * inv + t.g[l] * t.g[l] * dinv;
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        fn add_all(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add_all(&mut self.sigma, &o.sigma);
        add_all(&mut self.b, &o.b);
        add_all(&mut self.c, &o.c);
        self.sum_log_omega += o.sum_log_omega;
        add_all(&mut self.d_log_omega, &o.d_log_omega);
        add_all(&mut self.d_sigma, &o.d_sigma);
        add_all(&mut self.d_b, &o.d_b);
        add_all(&mut self.d_c, &o.d_c);
    }

    fn finalize(&self, n: usize, spec: &KernelSpec, prior: &PriorSpec, opts: EvalOptions) -> Result<MarginalEval> {
        let (q, k, nd) = (self.q, self.k, self.nd);
        let sigma = DMatrix::from_row_slice(q, q, &self.sigma);
        let bmat = DMatrix::from_row_slice(q, k, &self.b);
        let (mu, log_det_sigma, sigma_inv) = if q == 0 {
            (DMatrix::zeros(0, k), 0.0, DMatrix::zeros(0, 0))
        } else {
            let chol = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Rank("conditioned trend information is not positive definite".into()))?;
            let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (chol.solve(&bmat), ld, if nd > 0 { chol.inverse() } else { DMatrix::zeros(0, 0) })
        };
        let s2: Vec<f64> = (0..k)
            .map(|l| self.c[l] - (0..q).map(|a| bmat[(a, l)] * mu[(a, l)]).sum::<f64>())
            .collect();
        // below this the quadratic form is indistinguishable from roundoff
        let floor = |l: usize| 64.0 * f64::EPSILON * self.c[l];
        if let Some(l) = (0..k).position(|l| !(s2[l] > floor(l) && s2[l].is_finite())) {
            return Err(Error::DegenerateData(format!(
                "residual quadratic form {} for output column {l} is not positive",
                s2[l]
            )));
        }
        let dof = (n - q) as f64;
        let kf = k as f64;
        let nugget = opts.estimate_nugget.then_some(spec.nugget);
        let (prior_value, prior_grad) = prior.neg2log(&spec.ranges, nugget)?;
        let neg2log = dof * s2.iter().map(|v| v.ln()).sum::<f64>()
            + kf * self.sum_log_omega
            + kf * log_det_sigma
            + prior_value;

        let grad = (nd > 0).then(|| {
            (0..nd)
                .map(|j| {
                    let ds = &self.d_sigma[j * q * q..(j + 1) * q * q];
                    let db = &self.d_b[j * q * k..(j + 1) * q * k];
                    let dc = &self.d_c[j * k..(j + 1) * k];
                    let mut trace = 0.0;
                    for a in 0..q {
                        for c in 0..q {
                            trace += sigma_inv[(c, a)] * ds[a * q + c];
                        }
                    }
                    let mut quad = 0.0;
                    for l in 0..k {
                        let mut d = dc[l];
                        for a in 0..q {
                            d -= 2.0 * mu[(a, l)] * db[a * k + l];
                            for c in 0..q {
                                d += mu[(a, l)] * ds[a * q + c] * mu[(c, l)];
                            }
                        }
                        quad += d / s2[l];
                    }
                    dof * quad + kf * self.d_log_omega[j] + kf * trace + prior_grad[j]
                })
                .collect()
        });

        Ok(MarginalEval {
            neg2log,
            grad,
            s2,
            sigma,
            mu,
            log_det_sigma,
            sum_log_omega: self.sum_log_omega,
            prior_neg2log: prior_value,
        })
    }
}

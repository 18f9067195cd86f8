//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Gradient infinity norm fell below the tolerance.
    GradTol,
    /// Relative objective change fell below the tolerance.
    FTol,
    MaxIter,
    LineSearchFailed,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(self, Status::GradTol | Status::FTol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub gtol: f64,
    pub memory: usize,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self { max_iter: 100, ftol: 1e-8, gtol: 1e-5, memory: 10, max_step: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

/// Outcome of one seed in a multi-start run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: Vec<f64>,
    pub state: Option<OptState>,
    pub error: Option<String>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 20;
const MAX_ZOOM: usize = 30;

struct Point {
    a: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Counted<F> {
    /// Failed or non-finite evaluations come back as `+∞`.
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evals += 1;
        match (self.f)(x) {
            Ok((f, g)) if f.is_finite() && g.len() == x.len() && g.iter().all(|v| v.is_finite()) => (f, g),
            Ok(_) => (f64::INFINITY, Vec::new()),
            Err(e) => {
                debug!("objective failed at {x:?}: {e}");
                (f64::INFINITY, Vec::new())
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
pub fn minimize<F>(f: F, x0: &[f64], opts: &OptOptions) -> Result<OptState>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut obj = Counted { f, evals: 0 };
    let (mut fx, mut g) = obj.eval(x0);
    if !fx.is_finite() {
        return Err(Error::Fit(format!("objective is not finite at the starting point {x0:?}")));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let finish = |x: Vec<f64>, f: f64, grad: Vec<f64>, iterations: usize, evaluations: usize, status: Status| {
        Ok(OptState { x, f, grad, iterations, evaluations, status })
    };

    if inf_norm(&g) < opts.gtol {
        return finish(x, fx, g, 0, obj.evals, Status::GradTol);
    }
    while iterations < opts.max_iter {
        let mut d = direction(&g, &mem);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let dmax = inf_norm(&d);
        let a_max = opts.max_step / dmax;
        let a0 = if mem.is_empty() { (1.0 / dmax).min(a_max) } else { a_max.min(1.0) };

        let pt = match line_search(&mut obj, &x, fx, dphi0, &d, a0, a_max) {
            Ok(pt) => pt,
            Err(_) if !mem.is_empty() => {
                debug!("line search failed, restarting from steepest descent");
                mem.clear();
                continue;
            }
            Err(predicted) => {
                // the attainable decrease is below the objective tolerance
                let status = if predicted <= opts.ftol * fx.abs().max(1.0) {
                    Status::FTol
                } else {
                    Status::LineSearchFailed
                };
                return finish(x, fx, g, iterations, obj.evals, status);
            }
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|v| v * pt.a).collect();
        let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s.clone(), y, 1.0 / sy));
        }
        let f_old = fx;
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        fx = pt.f;
        g = pt.g;
        debug!("iter {iterations}: f = {fx:.10e}, |g| = {:.3e}", inf_norm(&g));
        if inf_norm(&g) < opts.gtol {
            return finish(x, fx, g, iterations, obj.evals, Status::GradTol);
        }
        if (f_old - fx).abs() <= opts.ftol * f_old.abs().max(fx.abs()).max(1.0) {
            return finish(x, fx, g, iterations, obj.evals, Status::FTol);
        }
    }
    debug_assert_eq!(x.len(), n);
    finish(x, fx, g, iterations, obj.evals, Status::MaxIter)
}

/// Two-loop recursion for `-H g`.
fn direction(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn line_search<F>(
    obj: &mut Counted<F>,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    a0: f64,
    a_max: f64,
) -> std::result::Result<Point, f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    // smallest step with a finite value that was rejected, for the failure estimate
    let mut rejected: Option<(f64, f64)> = None;
    let mut probe = |a: f64| {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let (f, g) = obj.eval(&xa);
        let dphi = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        if f.is_finite() && f > f0 + C1 * a * dphi0 && rejected.is_none_or(|(ra, _)| a < ra) {
            rejected = Some((a, f));
        }
        Point { a, f, g, dphi }
    };
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + C1 * p.a * dphi0;

    let mut prev = Point { a: 0.0, f: f0, g: Vec::new(), dphi: dphi0 };
    let mut a = a0;
    let mut found = None;
    for i in 0..MAX_BRACKET {
        let cur = probe(a);
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            found = zoom(&mut probe, prev, cur, f0, dphi0);
            break;
        }
        if cur.dphi.abs() <= -C2 * dphi0 {
            found = Some(cur);
            break;
        }
        if cur.dphi >= 0.0 {
            found = zoom(&mut probe, cur, prev, f0, dphi0);
            break;
        }
        if a >= a_max {
            // step cap reached with sufficient decrease
            found = Some(cur);
            break;
        }
        prev = cur;
        a = (2.0 * a).min(a_max);
        if i + 1 == MAX_BRACKET {
            found = Some(prev);
            break;
        }
    }
    found.ok_or_else(|| match rejected {
        // decrease predicted by the quadratic through f0, dphi0 and the rejected probe
        Some((ra, rf)) => {
            let curvature = 2.0 * (rf - f0 - ra * dphi0) / (ra * ra);
            if curvature > 0.0 {
                dphi0 * dphi0 / (2.0 * curvature)
            } else {
                0.0
            }
        }
        None => f64::INFINITY,
    })
}

fn zoom(
    probe: &mut impl FnMut(f64) -> Point,
    mut lo: Point,
    mut hi: Point,
    f0: f64,
    dphi0: f64,
) -> Option<Point> {
    for _ in 0..MAX_ZOOM {
        let width = hi.a - lo.a;
        if width.abs() <= 1e-14 * lo.a.abs().max(hi.a.abs()) {
            break;
        }
        let mut a = cubic_min(&lo, &hi).unwrap_or(lo.a + 0.5 * width);
        let (left, right) = (lo.a.min(hi.a), lo.a.max(hi.a));
        let margin = 0.1 * (right - left);
        if !(a > left + margin && a < right - margin) {
            a = lo.a + 0.5 * width;
        }
        let cur = probe(a);
        if !(cur.f.is_finite() && cur.f <= f0 + C1 * a * dphi0) || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dphi.abs() <= -C2 * dphi0 {
                return Some(cur);
            }
            if cur.dphi * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // sufficient decrease without the curvature condition
    (lo.a > 0.0).then_some(lo)
}

/// Minimizer of the cubic interpolating values and slopes at both ends.
fn cubic_min(p: &Point, q: &Point) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.dphi.is_finite() && q.dphi.is_finite()) {
        return None;
    }
    let d1 = p.dphi + q.dphi - 3.0 * (p.f - q.f) / (p.a - q.a);
    let disc = d1 * d1 - p.dphi * q.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.a - p.a).signum() * disc.sqrt();
    let a = q.a - (q.a - p.a) * (q.dphi + d2 - d1) / (q.dphi - p.dphi + 2.0 * d2);
    a.is_finite().then_some(a)
}

/// Runs [`minimize`] from every seed and keeps the lowest terminal objective.
///
/// Seeds where the objective cannot be evaluated are skipped. Fails only
/// when no seed produced a terminal state.
pub fn optimize<F>(mut f: F, seeds: &[Vec<f64>], opts: &OptOptions) -> Result<(OptState, Vec<SeedReport>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut reports = Vec::with_capacity(seeds.len());
    for seed in seeds {
        match minimize(&mut f, seed, opts) {
            Ok(state) => reports.push(SeedReport { seed: seed.clone(), state: Some(state), error: None }),
            Err(e) => {
                warn!("skipping seed {seed:?}: {e}");
                reports.push(SeedReport { seed: seed.clone(), state: None, error: Some(e.to_string()) });
            }
        }
    }
    let best = reports
        .iter()
        .filter_map(|r| r.state.as_ref())
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .cloned();
    match best {
        Some(state) => Ok((state, reports)),
        None => Err(Error::Fit(format!(
            "objective could not be evaluated at any of {} seeds: {}",
            seeds.len(),
            reports.iter().filter_map(|r| r.error.as_deref()).collect::<Vec<_>>().join("; ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // diag(1, 4, 9) centred at (1, -2, 0.5)
        let c = [1.0, -2.0, 0.5];
        let w = [1.0, 4.0, 9.0];
        let f = (0..3).map(|i| 0.5 * w[i] * (x[i] - c[i]).powi(2)).sum();
        let g = (0..3).map(|i| w[i] * (x[i] - c[i])).collect();
        Ok((f, g))
    }

    #[test]
    fn convex_quadratic() {
        let opts = OptOptions { ftol: 0.0, gtol: 1e-10, ..Default::default() };
        let s = minimize(quadratic, &[0.0, 0.0, 0.0], &opts).unwrap();
        assert_eq!(s.status, Status::GradTol);
        assert!(s.iterations <= 50);
        for (x, c) in s.x.iter().zip([1.0, -2.0, 0.5]) {
            assert!((x - c).abs() < 1e-8);
        }
    }

    #[test]
    fn seed_at_optimum_returns_immediately() {
        let s = minimize(quadratic, &[1.0, -2.0, 0.5], &OptOptions::default()).unwrap();
        assert_eq!(s.status, Status::GradTol);
        assert_eq!(s.iterations, 0);
        assert_eq!(s.evaluations, 1);
    }

    fn tilted_double_well(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = x[0];
        Ok(((v * v - 1.0).powi(2) + 0.3 * v, vec![4.0 * v * (v * v - 1.0) + 0.3]))
    }

    #[test]
    fn multi_start_keeps_lower_mode() {
        let (best, reports) = optimize(tilted_double_well, &[vec![1.2], vec![-0.3]], &OptOptions::default()).unwrap();
        let right = reports[0].state.as_ref().unwrap();
        assert!(right.x[0] > 0.0, "first seed should stay in the right well");
        assert!(best.x[0] < 0.0);
        assert!(best.f < right.f);
    }

    #[test]
    fn nonfinite_seed_is_skipped() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 10.0 {
                Err(Error::invalid("out of domain"))
            } else {
                Ok(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]))
            }
        };
        let (best, reports) = optimize(f, &[vec![20.0], vec![3.0]], &OptOptions::default()).unwrap();
        assert!(reports[0].error.is_some());
        assert!((best.x[0] - 1.0).abs() < 1e-5);
        assert!(optimize(f, &[vec![20.0]], &OptOptions::default()).is_err());
    }

    #[test]
    fn steps_respect_cap_and_decrease() {
        let mut seen = Vec::new();
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            seen.push(x.to_vec());
            Ok((1e3 * x[0] * x[0] + x[1].powi(4) / 4.0, vec![2e3 * x[0], x[1].powi(3)]))
        };
        let s = minimize(f, &[0.5, 3.0], &OptOptions::default()).unwrap();
        assert!(s.status.converged(), "{:?}", s.status);
        for p in &seen {
            assert!((p[0] - 0.5).abs() <= 2.0 * 100.0 && p.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let opts = OptOptions { ftol: 0.0, gtol: 1e-8, max_iter: 200, ..Default::default() };
        let s = minimize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6, "{s:?}");
    }
}

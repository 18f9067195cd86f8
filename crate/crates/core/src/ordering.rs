//! Maximin ordering and nearest-neighbour conditioning sets.
//!
//! Both operate on scaled inputs `x̃_l = x_l / scale_l`. All tie-breaking is by
//! lowest index, so plans are fully deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

/// How the first point of a maximin ordering is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Anchor {
    /// Point nearest the centroid of the scaled design.
    #[default]
    Centroid,
    /// Uniformly random point drawn with the given seed.
    Random(u64),
}

/// Ordering of the design plus the conditioning set of every ordered point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningPlan {
    /// `order[i]` is the design row placed at position `i`.
    pub order: Vec<usize>,
    /// `neighbors[i]` holds ordered positions `< i`, ascending.
    pub neighbors: Vec<Vec<usize>>,
    pub m: usize,
    pub scale: Vec<f64>,
}

impl ConditioningPlan {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Checks the structural invariants against a design of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.order.len() != n || self.neighbors.len() != n {
            return Err(Error::shape(format!(
                "plan covers {} points, design has {n}",
                self.order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &o in &self.order {
            if o >= n || std::mem::replace(&mut seen[o], true) {
                return Err(Error::invalid("plan order is not a permutation"));
            }
        }
        for (i, b) in self.neighbors.iter().enumerate() {
            if b.len() != self.m.min(i) || b.iter().any(|&j| j >= i) {
                return Err(Error::invalid(format!("conditioning set of point {i} is malformed")));
            }
        }
        Ok(())
    }
}

fn scaled_points(design: &DesignMatrix, scale: &[f64]) -> Result<Vec<f64>> {
    if scale.len() != design.ncols() {
        return Err(Error::shape(format!(
            "{} scale entries for {} input dimensions",
            scale.len(),
            design.ncols()
        )));
    }
    if let Some(s) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid(format!("scale entry {s} must be positive")));
    }
    let p = design.ncols();
    let mut out = design.as_slice().to_vec();
    for row in out.chunks_exact_mut(p) {
        for (v, s) in row.iter_mut().zip(scale) {
            *v /= s;
        }
    }
    Ok(out)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-dimension range divided by five.
pub fn default_scale(design: &DesignMatrix) -> Result<Vec<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    (0..p)
        .map(|l| {
            let (lo, hi) = (0..n)
                .map(|i| design.row(i)[l])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                Ok((hi - lo) / 5.0)
            } else {
                Err(Error::DegenerateDimension { dim: l })
            }
        })
        .collect()
}

/// Greedy maximin permutation in the scaled metric.
pub fn maximin_order(design: &DesignMatrix, scale: &[f64], anchor: Anchor) -> Result<Vec<usize>> {
    let x = scaled_points(design, scale)?;
    let n = design.nrows();
    let p = design.ncols();
    let pt = |i: usize| &x[i * p..(i + 1) * p];

    let first = match anchor {
        Anchor::Centroid => {
            let mut centroid = vec![0.0; p];
            for i in 0..n {
                for (c, v) in centroid.iter_mut().zip(pt(i)) {
                    *c += v / n as f64;
                }
            }
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for i in 0..n {
                let d = sq_dist(pt(i), &centroid);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        }
        Anchor::Random(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..n),
    };

    let mut order = Vec::with_capacity(n);
    let mut chosen = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut next = first;
    for _ in 0..n {
        order.push(next);
        chosen[next] = true;
        let c = pt(next).to_vec();
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let d = sq_dist(pt(i), &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        next = best;
    }
    Ok(order)
}

/// Builds the `m` nearest earlier-ordered neighbours of every ordered point.
pub fn nn_condition(
    design: &DesignMatrix,
    order: &[usize],
    m: usize,
    scale: &[f64],
    exec: Execution,
) -> Result<ConditioningPlan> {
    let n = design.nrows();
    if m < 1 || m + 1 > n {
        return Err(Error::invalid(format!(
            "conditioning size m = {m} must satisfy 1 <= m <= n - 1 = {}",
            n.saturating_sub(1)
        )));
    }
    if order.len() != n {
        return Err(Error::shape(format!("order has {} entries for {n} points", order.len())));
    }
    let x = scaled_points(design, scale)?;
    let p = design.ncols();
    // scaled coordinates in ordered sequence
    let mut xo = Vec::with_capacity(n * p);
    for &o in order {
        xo.extend_from_slice(&x[o * p..(o + 1) * p]);
    }
    let pt = |i: usize| &xo[i * p..(i + 1) * p];

    let neighbors = map_indexed(exec, n, |i| {
        let want = m.min(i);
        if want == i {
            return (0..i).collect::<Vec<_>>();
        }
        // sorted ascending by (distance, index)
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(want + 1);
        let xi = pt(i);
        for j in 0..i {
            let d = sq_dist(pt(j), xi);
            if best.len() == want {
                if d >= best[want - 1].0 {
                    continue;
                }
                best.pop();
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
        }
        let mut idx: Vec<usize> = best.into_iter().map(|(_, j)| j).collect();
        idx.sort_unstable();
        idx
    });

    Ok(ConditioningPlan { order: order.to_vec(), neighbors, m, scale: scale.to_vec() })
}

/// Maximin ordering followed by neighbour search, both in the scaled metric.
pub fn build_plan(
    design: &DesignMatrix,
    m: usize,
    scale: &[f64],
    anchor: Anchor,
    exec: Execution,
) -> Result<ConditioningPlan> {
    let order = maximin_order(design, scale, anchor)?;
    nn_condition(design, &order, m, scale, exec)
}

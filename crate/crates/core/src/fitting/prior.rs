//! Jointly robust prior on the range parameters.

use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_JR_A: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// `π(λ) ∝ (Σ C_l/λ_l)^a · exp(-b Σ C_l/λ_l)`.
    JointlyRobust { a: f64, b: f64, c: Vec<f64> },
    /// Flat prior; the posterior mode is the marginal likelihood maximizer.
    None,
}

impl PriorSpec {
    /// Default hyperparameters for a design: `a = 0.2`, `b = n^{-1/p}(a + p)`
    /// and `C_l` the mean absolute pairwise difference in dimension `l`.
    pub fn jointly_robust(design: &DesignMatrix) -> Result<Self> {
        let n = design.nrows();
        let p = design.ncols();
        if n < 2 {
            return Err(Error::invalid("jointly robust prior needs at least two design points"));
        }
        let a = DEFAULT_JR_A;
        let b = (n as f64).powf(-1.0 / p as f64) * (a + p as f64);
        let c = (0..p)
            .map(|l| {
                let mut col: Vec<f64> = design.rows().map(|r| r[l]).collect();
                col.sort_by(f64::total_cmp);
                mean_abs_pairwise_diff(&col)
            })
            .collect::<Vec<_>>();
        if let Some(dim) = c.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateDimension { dim });
        }
        Ok(PriorSpec::JointlyRobust { a, b, c })
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let PriorSpec::JointlyRobust { a, b, c } = self {
            if !(*a > 0.0 && *b > 0.0) {
                return Err(Error::invalid(format!("prior needs a > 0 and b > 0, got a={a}, b={b}")));
            }
            if c.len() != p || c.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid("prior scale C must have p positive entries"));
            }
        }
        Ok(())
    }

    /// `-2 log π` (up to a constant) and its gradient.
    ///
    /// The gradient has one entry per range parameter, plus one for the
    /// nugget ratio when `nugget` is `Some`. An estimated nugget enters the
    /// sum next to the inverse ranges.
    pub fn neg2log(&self, ranges: &[f64], nugget: Option<f64>) -> Result<(f64, Vec<f64>)> {
        if let Some(l) = ranges.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("range parameter {l} must be positive")));
        }
        let nd = ranges.len() + usize::from(nugget.is_some());
        match self {
            PriorSpec::None => Ok((0.0, vec![0.0; nd])),
            PriorSpec::JointlyRobust { a, b, c } => {
                if c.len() != ranges.len() {
                    return Err(Error::shape(format!(
                        "prior has {} scales for {} ranges",
                        c.len(),
                        ranges.len()
                    )));
                }
                let s: f64 = c.iter().zip(ranges).map(|(c, l)| c / l).sum::<f64>() + nugget.unwrap_or(0.0);
                let value = -2.0 * (a * s.ln() - b * s);
                // d/ds of the value, then chain through s
                let dv_ds = -2.0 * (a / s - b);
                let mut grad: Vec<f64> = c.iter().zip(ranges).map(|(c, l)| -dv_ds * c / (l * l)).collect();
                if nugget.is_some() {
                    grad.push(dv_ds);
                }
                Ok((value, grad))
            }
        }
    }
}

/// Convenience wrapper over [`PriorSpec::neg2log`] for range parameters only.
pub fn jr_prior_neg2log(ranges: &[f64], prior: &PriorSpec) -> Result<(f64, Vec<f64>)> {
    prior.neg2log(ranges, None)
}

/// Mean of `|x_i - x_j|` over ordered pairs `i ≠ j`, for sorted input.
fn mean_abs_pairwise_diff(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let total: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (2.0 * i as f64 - (n as f64 - 1.0)))
        .sum();
    total / (n as f64 * (n as f64 - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_value() {
        let b = 10f64.powf(-1.0) * (0.2 + 1.0);
        assert!((b - 0.12).abs() < 1e-15);
        let prior = PriorSpec::JointlyRobust { a: 0.2, b, c: vec![1.0] };
        let (v, _) = jr_prior_neg2log(&[1.0], &prior).unwrap();
        assert!((v - 0.24).abs() < 1e-14);
    }

    #[test]
    fn penalizes_tiny_ranges() {
        let prior = PriorSpec::JointlyRobust { a: 0.2, b: 0.5, c: vec![0.3, 0.3] };
        let small = jr_prior_neg2log(&[1e-4, 1e-4], &prior).unwrap().0;
        let mid = jr_prior_neg2log(&[0.5, 0.5], &prior).unwrap().0;
        assert!(small > mid + 1000.0);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let prior = PriorSpec::JointlyRobust { a: 0.2, b: 0.7, c: vec![0.31, 0.28, 0.35] };
        for (ranges, nugget) in [
            (vec![0.4, 1.3, 0.07], None),
            (vec![2.0, 0.2, 0.9], Some(0.03)),
        ] {
            let (_, g) = prior.neg2log(&ranges, nugget).unwrap();
            let mut params = ranges.clone();
            params.extend(nugget);
            for j in 0..params.len() {
                let h = 1e-6 * params[j];
                let eval = |v: f64| {
                    let mut p = params.clone();
                    p[j] = v;
                    prior.neg2log(&p[..ranges.len()], nugget.map(|_| p[ranges.len()])).unwrap().0
                };
                let fd = (eval(params[j] + h) - eval(params[j] - h)) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-6 * fd.abs().max(1e-8), "{j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn nonpositive_range_rejected() {
        let prior = PriorSpec::None;
        assert!(jr_prior_neg2log(&[0.0], &prior).is_err());
        assert_eq!(jr_prior_neg2log(&[0.5, 2.0], &prior).unwrap(), (0.0, vec![0.0, 0.0]));
    }

    #[test]
    fn default_hyperparameters() {
        let d = DesignMatrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 1.0], vec![1.0, 0.25], vec![0.25, 0.5]])
            .unwrap();
        let PriorSpec::JointlyRobust { a, b, c } = PriorSpec::jointly_robust(&d).unwrap() else {
            panic!("expected jointly robust prior");
        };
        assert_eq!(a, 0.2);
        assert!((b - 4f64.powf(-0.5) * 2.2).abs() < 1e-15);
        // brute force mean over i != j
        for (l, cl) in c.iter().enumerate() {
            let col: Vec<f64> = d.rows().map(|r| r[l]).collect();
            let mut sum = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        sum += (col[i] - col[j]).abs();
                    }
                }
            }
            assert!((cl - sum / 12.0).abs() < 1e-15);
        }
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression basis `h(x)` of the mean trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendBasis {
    /// No trend, `q = 0`.
    Zero,
    /// `h(x) = 1`.
    Constant,
    /// `h(x) = (1, x₁, …, x_p)`.
    Linear,
}

impl TrendBasis {
    pub fn q(&self, p: usize) -> usize {
        match self {
            TrendBasis::Zero => 0,
            TrendBasis::Constant => 1,
            TrendBasis::Linear => 1 + p,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            TrendBasis::Zero => {}
            TrendBasis::Constant => out[0] = 1.0,
            TrendBasis::Linear => {
                out[0] = 1.0;
                out[1..].copy_from_slice(x);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q(x.len())];
        self.eval_into(x, &mut out);
        out
    }

    /// Row-major `n × q` basis matrix for row-major points of width `p`.
    pub fn matrix(&self, points: &[f64], p: usize) -> Vec<f64> {
        let q = self.q(p);
        let n = points.len().checked_div(p).unwrap_or(0);
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            self.eval_into(&points[i * p..(i + 1) * p], &mut out[i * q..(i + 1) * q]);
        }
        out
    }
}

impl fmt::Display for TrendBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrendBasis::Zero => "zero",
            TrendBasis::Constant => "constant",
            TrendBasis::Linear => "linear",
        })
    }
}

impl FromStr for TrendBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" | "none" => Ok(TrendBasis::Zero),
            "constant" => Ok(TrendBasis::Constant),
            "linear" => Ok(TrendBasis::Linear),
            other => Err(Error::invalid(format!("unknown trend `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_rows() {
        assert_eq!(TrendBasis::Linear.eval(&[0.5, 2.0]), vec![1.0, 0.5, 2.0]);
        assert_eq!(TrendBasis::Constant.eval(&[0.5, 2.0]), vec![1.0]);
        assert!(TrendBasis::Zero.eval(&[0.5]).is_empty());
        let m = TrendBasis::Linear.matrix(&[0.1, 0.2, 0.3, 0.4], 2);
        assert_eq!(m, vec![1.0, 0.1, 0.2, 1.0, 0.3, 0.4]);
    }
}

//! Separable correlation functions and their range derivatives.
//!
//! All families are written in the product form
//! `c(x, x') = exp(-Σ_l s_l) · Π_l a_l`, where `s_l` and `a_l` depend only on
//! the per-dimension distance. That keeps a single `exp` per pair regardless
//! of the input dimension.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-(d/λ)^α)` with `α ∈ [1, 2]`.
    PowerExponential { alpha: f64 },
    Matern32,
    Matern52,
}

impl KernelFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::PowerExponential { alpha } if !(1.0..=2.0).contains(&alpha) => Err(
                Error::invalid(format!("power exponential alpha {alpha} outside [1, 2]")),
            ),
            _ => Ok(()),
        }
    }

    /// `(s, a, ∂/∂λ log c)` for one dimension at distance `d ≥ 0`.
    #[inline]
    fn terms(&self, d: f64, lambda: f64) -> (f64, f64, f64) {
        if d == 0.0 {
            return (0.0, 1.0, 0.0);
        }
        match *self {
            KernelFamily::PowerExponential { alpha } => {
                let u = d / lambda;
                let s = if alpha == 2.0 {
                    u * u
                } else if alpha == 1.0 {
                    u
                } else {
                    u.powf(alpha)
                };
                (s, 1.0, alpha * s / lambda)
            }
            KernelFamily::Matern32 => {
                let t = SQRT3 * d / lambda;
                (t, 1.0 + t, t * t / ((1.0 + t) * lambda))
            }
            KernelFamily::Matern52 => {
                let t = SQRT5 * d / lambda;
                let a = 1.0 + t + t * t / 3.0;
                (t, a, t * t * (1.0 + t) / (3.0 * a * lambda))
            }
        }
    }

    /// Polynomial prefactor, kept separate so the product needs one `exp`.
    #[inline]
    fn prefactor(&self, d: f64, lambda: f64) -> (f64, f64) {
        if d == 0.0 {
            return (0.0, 1.0);
        }
        match *self {
            KernelFamily::PowerExponential { alpha } => {
                let u = d / lambda;
                let s = if alpha == 2.0 {
                    u * u
                } else if alpha == 1.0 {
                    u
                } else {
                    u.powf(alpha)
                };
                (s, 1.0)
            }
            KernelFamily::Matern32 => {
                let t = SQRT3 * d / lambda;
                (t, 1.0 + t)
            }
            KernelFamily::Matern52 => {
                let t = SQRT5 * d / lambda;
                (t, 1.0 + t + t * t / 3.0)
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::PowerExponential { alpha } => write!(f, "pow_exp:{alpha}"),
            KernelFamily::Matern32 => f.write_str("matern32"),
            KernelFamily::Matern52 => f.write_str("matern52"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let family = match s.trim() {
            "matern32" => KernelFamily::Matern32,
            "matern52" => KernelFamily::Matern52,
            other => {
                let alpha = other
                    .strip_prefix("pow_exp:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown kernel family `{other}`")))?;
                KernelFamily::PowerExponential { alpha }
            }
        };
        family.validate()?;
        Ok(family)
    }
}

/// Kernel family, one range per input dimension and the nugget-variance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub ranges: Vec<f64>,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, ranges: Vec<f64>, nugget: f64) -> Result<Self> {
        let spec = Self { family, ranges, nugget };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.ranges.is_empty() {
            return Err(Error::invalid("kernel needs at least one range parameter"));
        }
        if let Some(l) = self.ranges.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("range parameter {l} must be positive and finite")));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::invalid(format!("nugget ratio {} must be nonnegative", self.nugget)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn with_ranges(&self, ranges: Vec<f64>) -> Self {
        Self { ranges, ..self.clone() }
    }

    /// Product correlation between two points.
    #[inline]
    pub fn corr(&self, xi: &[f64], xj: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut a = 1.0;
        for ((u, v), &lambda) in xi.iter().zip(xj).zip(&self.ranges) {
            let (sl, al) = self.family.prefactor((u - v).abs(), lambda);
            s += sl;
            a *= al;
        }
        a * (-s).exp()
    }

    /// Product correlation plus `∂ log c / ∂λ_l` written into `dlog`.
    ///
    /// The log-derivative stays finite even when `c` underflows, and
    /// `∂c/∂λ_l = c · dlog[l]`.
    #[inline]
    pub fn corr_dlog(&self, xi: &[f64], xj: &[f64], dlog: &mut [f64]) -> f64 {
        let mut s = 0.0;
        let mut a = 1.0;
        for (l, ((u, v), &lambda)) in xi.iter().zip(xj).zip(&self.ranges).enumerate() {
            let (sl, al, dl) = self.family.terms((u - v).abs(), lambda);
            s += sl;
            a *= al;
            dlog[l] = dl;
        }
        a * (-s).exp()
    }
}

/// One-dimensional correlation `c_l(d; λ)`.
pub fn corr_1d(family: KernelFamily, d: f64, lambda: f64) -> Result<f64> {
    check_pair(d, lambda)?;
    let (s, a) = family.prefactor(d, lambda);
    Ok(a * (-s).exp())
}

/// `∂c_l/∂λ` for one dimension.
pub fn corr_1d_dlambda(family: KernelFamily, d: f64, lambda: f64) -> Result<f64> {
    check_pair(d, lambda)?;
    let (s, a, dl) = family.terms(d, lambda);
    Ok(a * (-s).exp() * dl)
}

fn check_pair(d: f64, lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("range parameter {lambda} must be positive")));
    }
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::invalid(format!("distance {d} must be nonnegative")));
    }
    Ok(())
}

/// Correlation value with its gradient in the range parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrDerivs {
    pub value: f64,
    pub d_dlambda: Vec<f64>,
}

pub fn corr_product(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> Result<f64> {
    check_dims(spec, xi, xj)?;
    Ok(spec.corr(xi, xj))
}

pub fn corr_product_grad(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> Result<CorrDerivs> {
    check_dims(spec, xi, xj)?;
    let mut d = vec![0.0; spec.dim()];
    let value = spec.corr_dlog(xi, xj, &mut d);
    d.iter_mut().for_each(|v| *v *= value);
    Ok(CorrDerivs { value, d_dlambda: d })
}

fn check_dims(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> Result<()> {
    if xi.len() != spec.dim() || xj.len() != spec.dim() {
        return Err(Error::shape(format!(
            "points of length {} and {} against {} range parameters",
            xi.len(),
            xj.len(),
            spec.dim()
        )));
    }
    Ok(())
}

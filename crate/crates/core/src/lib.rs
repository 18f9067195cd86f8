//! Gaussian process emulation with Vecchia-approximated marginal likelihoods.
//!
//! Ranges are estimated by maximizing a marginal posterior in which the trend
//! coefficients and the variance are integrated out. Many output columns can
//! share one set of ranges while keeping their own trend and variance.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod exactgp;
pub mod exec;
pub mod experiment;
pub mod fitting;
pub mod gradcheck;
pub mod kernels;
pub mod linalg;
pub mod ordering;
pub mod predict;
pub mod reshape;
pub mod trend;
pub mod vecchia;

pub use design::{DesignMatrix, OutputMatrix};
pub use error::{Error, Result};
pub use exec::Execution;
pub use fitting::{fit, FitOptions, FittedEmulator, Method, PriorSpec};
pub use kernels::{KernelFamily, KernelSpec};
pub use ordering::ConditioningPlan;
pub use predict::{PredictMode, PredictiveResult};
pub use trend::TrendBasis;

//! Designs, output matrices, Latin hypercube sampling and synthetic GP draws.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::JitteredCholesky;

const DUPLICATE_TOL: f64 = 1e-12;

/// `n × p` input configurations, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    /// Per-dimension `(min, max)` of the raw inputs.
    bounds: Vec<(f64, f64)>,
    normalized: bool,
}

impl DesignMatrix {
    /// Validates a raw design; bounds are taken from the data.
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::invalid("design needs at least one row and one column"));
        }
        if data.len() != n * p {
            return Err(Error::shape(format!("{} values for a {n}x{p} design", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite design entry at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        let bounds = column_bounds(&data, n, p);
        let design = Self { n, p, data, bounds, normalized: false };
        design.check_duplicates()?;
        Ok(design)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::shape(format!("row {i} has {} columns, expected {p}", rows[i].len())));
        }
        Self::new(rows.len(), p, rows.concat())
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rescales each column to `[0, 1]` using its own range.
    pub fn normalize(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        for (dim, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::DegenerateDimension { dim });
            }
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.p) {
            normalize_in_place(row, &self.bounds);
        }
        Ok(Self { data, normalized: true, ..self.clone() })
    }

    /// Maps raw inputs into the unit cube of another design's `bounds`.
    ///
    /// Points outside those bounds land outside `[0, 1]`, which is allowed.
    pub fn normalize_with(&self, bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.len() != self.p {
            return Err(Error::shape(format!("{} bounds for {} columns", bounds.len(), self.p)));
        }
        if let Some(dim) = bounds.iter().position(|&(lo, hi)| !(hi > lo)) {
            return Err(Error::DegenerateDimension { dim });
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.p) {
            normalize_in_place(row, bounds);
        }
        Ok(Self { data, bounds: bounds.to_vec(), normalized: true, ..self.clone() })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            if i >= self.n {
                return Err(Error::shape(format!("row index {i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(idx.len(), self.p, data)?;
        if self.normalized {
            out.normalized = true;
            out.bounds = self.bounds.clone();
        }
        Ok(out)
    }

    fn check_duplicates(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.sort_by(|&a, &b| {
            self.row(a)
                .iter()
                .zip(self.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in idx.windows(2) {
            let (a, b) = (self.row(w[0]), self.row(w[1]));
            if a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DUPLICATE_TOL) {
                return Err(Error::invalid(format!("design rows {} and {} coincide", w[0], w[1])));
            }
        }
        Ok(())
    }
}

/// Maps a raw point into the unit cube defined by `bounds`.
pub fn normalize_in_place(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = (*v - lo) / (hi - lo);
    }
}

fn column_bounds(data: &[f64], n: usize, p: usize) -> Vec<(f64, f64)> {
    (0..p)
        .map(|l| {
            (0..n).map(|i| data[i * p + l]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        })
        .collect()
}

/// `n × k` simulator responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl OutputMatrix {
    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("output matrix needs at least one column"));
        }
        if data.len() != n * k {
            return Err(Error::shape(format!("{} values for a {n}x{k} output matrix", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite output at row {}, column {}",
                pos / k,
                pos % k
            )));
        }
        Ok(Self { n, k, data })
    }

    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), 1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::shape(format!("row {i} has {} columns, expected {k}", rows[i].len())));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            if i >= self.n {
                return Err(Error::shape(format!("row index {i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.k, data)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&j) = cols.iter().find(|&&j| j >= self.k) {
            return Err(Error::shape(format!("column {j} out of range for {} columns", self.k)));
        }
        let mut data = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            data.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        Self::new(self.n, cols.len(), data)
    }

    /// Column-major copy for dense linear algebra.
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.data)
    }
}

/// Random Latin hypercube on the unit cube: every column has exactly one
/// point in each stratum `[j/n, (j+1)/n)`.
pub fn lhs_sample(n: usize, p: usize, seed: u64) -> Result<DesignMatrix> {
    if n == 0 || p == 0 {
        return Err(Error::invalid("Latin hypercube needs n >= 1 and p >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * p];
    let mut perm: Vec<usize> = (0..n).collect();
    for l in 0..p {
        perm.shuffle(&mut rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            // keep the point strictly inside its stratum
            let v = ((stratum as f64 + u) / n as f64).min((stratum + 1) as f64 / n as f64 - f64::EPSILON);
            data[i * p + l] = v;
        }
    }
    DesignMatrix::new(n, p, data)
}

/// Correlation matrix `R` over the rows of a design, without nugget.
pub fn correlation_matrix(spec: &KernelSpec, design: &DesignMatrix) -> DMatrix<f64> {
    let n = design.nrows();
    let mut r = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in j + 1..n {
            let c = spec.corr(design.row(i), design.row(j));
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

/// Draws `k` independent GP realizations at the design points.
pub fn sample_gp(
    design: &DesignMatrix,
    spec: &KernelSpec,
    sigma2: f64,
    k: usize,
    seed: u64,
) -> Result<OutputMatrix> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let n = design.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::<f64>::zeros(n, k);
    for v in u.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    sample_gp_with_normals(design, spec, sigma2, &u)
}

/// Maps standard normals `U` (n × k) to `y = Fᵀ U` with `FᵀF = σ² R`.
pub fn sample_gp_with_normals(
    design: &DesignMatrix,
    spec: &KernelSpec,
    sigma2: f64,
    normals: &DMatrix<f64>,
) -> Result<OutputMatrix> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid(format!("variance {sigma2} must be positive")));
    }
    if spec.dim() != design.ncols() {
        return Err(Error::shape(format!(
            "kernel has {} ranges for a design with {} columns",
            spec.dim(),
            design.ncols()
        )));
    }
    if normals.nrows() != design.nrows() {
        return Err(Error::shape(format!(
            "{} rows of normals for {} design points",
            normals.nrows(),
            design.nrows()
        )));
    }
    let mut cov = correlation_matrix(spec, design);
    for i in 0..cov.nrows() {
        cov[(i, i)] += spec.nugget;
    }
    cov *= sigma2;
    let factor = JitteredCholesky::new(&cov).ok_or_else(|| Error::Conditioning {
        point: None,
        reason: "GP covariance is not positive definite".into(),
    })?;
    // F = Lᵀ, so Fᵀ U = L U.
    let y = factor.chol.l() * normals;
    let (n, k) = y.shape();
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        data.extend(y.row(i).iter().copied());
    }
    OutputMatrix::new(n, k, data)
}

//! Dense symmetric factorizations shared by the exact and Vecchia paths.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Diagonal jitter schedule tried after a plain factorization fails.
pub const JITTER_SCHEDULE: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factor together with the diagonal jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    /// Factorizes `a`, escalating the diagonal jitter along [`JITTER_SCHEDULE`].
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Some(Self { chol, jitter: 0.0 });
        }
        for &delta in JITTER_SCHEDULE.iter() {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += delta;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Some(Self { chol, jitter: delta });
            }
        }
        None
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Full inverse of the factorized matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        spd_inverse_from_factor(self.chol.l_dirty())
    }
}

/// Inverse of the lower-triangular matrix stored in the lower half of `l`.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = DMatrix::<f64>::zeros(n, n);
    let ls = l.as_slice();
    let xs = x.as_mut_slice();
    for j in 0..n {
        let col = &mut xs[j * n..(j + 1) * n];
        col[j] = 1.0;
        for k in j..n {
            let v = col[k] / ls[k * n + k];
            col[k] = v;
            if v != 0.0 {
                let lk = &ls[k * n + k + 1..(k + 1) * n];
                for (xi, li) in col[k + 1..].iter_mut().zip(lk) {
                    *xi -= v * li;
                }
            }
        }
    }
    x
}

/// `(L Lᵀ)⁻¹` for a lower Cholesky factor `L`, symmetric and fully populated.
pub fn spd_inverse_from_factor(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = lower_triangular_inverse(l);
    let ls = linv.as_slice();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        for a in b..n {
            // columns of L⁻¹ vanish above their diagonal
            let ca = &ls[a * n + a..(a + 1) * n];
            let cb = &ls[b * n + a..(b + 1) * n];
            let v: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// In-place Cholesky of a row-major `n × n` symmetric matrix.
///
/// Only the lower triangle is read; on success it holds `L`. Returns false
/// when a pivot is not strictly positive.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let (top, bottom) = a.split_at_mut((j + 1) * n);
        let rowj = &mut top[j * n..];
        let d = rowj[j] - rowj[..j].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        rowj[j] = d;
        let rowj = &rowj[..j];
        for rowi in bottom.chunks_exact_mut(n) {
            let s: f64 = rowi[..j].iter().zip(rowj).map(|(x, y)| x * y).sum();
            rowi[j] = (rowi[j] - s) / d;
        }
    }
    true
}

/// Solves `L Lᵀ x = b` in place for the factor produced by [`cholesky_in_place`].
pub fn cholesky_solve_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

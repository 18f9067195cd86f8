//! Turns a spatial output index into an extra input dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, OutputMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReshapeMode {
    /// Every (run, output column) pair becomes a row.
    Full,
    /// Each run keeps one uniformly drawn output column.
    Sampled(u64),
}

/// Appends the coordinate of an output column to the inputs and returns a
/// scalar-output data set.
///
/// Rows are grouped by run; within a run, `Full` keeps column order.
pub fn reshape_space_as_input(
    design: &DesignMatrix,
    outputs: &OutputMatrix,
    coords: &[f64],
    mode: ReshapeMode,
) -> Result<(DesignMatrix, OutputMatrix)> {
    let n = design.nrows();
    let p = design.ncols();
    let k = outputs.ncols();
    if outputs.nrows() != n {
        return Err(Error::shape(format!("{} output rows for {n} design rows", outputs.nrows())));
    }
    if coords.len() != k {
        return Err(Error::shape(format!("{} coordinates for {k} output columns", coords.len())));
    }
    if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
        return Err(Error::invalid(format!("non-finite coordinate {c}")));
    }
    let pick: Vec<(usize, usize)> = match mode {
        ReshapeMode::Full => (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).collect(),
        ReshapeMode::Sampled(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|i| (i, rng.random_range(0..k))).collect()
        }
    };
    let mut x = Vec::with_capacity(pick.len() * (p + 1));
    let mut y = Vec::with_capacity(pick.len());
    for &(i, j) in &pick {
        x.extend_from_slice(design.row(i));
        x.push(coords[j]);
        y.push(outputs.get(i, j));
    }
    Ok((DesignMatrix::new(pick.len(), p + 1, x)?, OutputMatrix::from_column(y)?))
}

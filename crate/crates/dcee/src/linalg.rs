//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Every matrix this crate inverts is tiny (the dimension is the number of
//! effect or regression coefficients), so we can afford a singular value
//! decomposition everywhere and gate each solve on the reciprocal condition
//! number instead of silently regularising rank-deficient systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal-condition-number floor for every matrix this crate inverts.
pub const MIN_RCOND: f64 = 1e-10;

fn gated_svd(
    a: &DMatrix<f64>,
    what: &str,
) -> Result<(nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} contains non-finite entries")));
    }
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if !(rcond >= MIN_RCOND) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond,
            min: MIN_RCOND,
        });
    }
    Ok((svd, rcond))
}

/// Solve `a x = b`, refusing matrices whose reciprocal condition number is
/// below [`MIN_RCOND`]. `what` names the matrix in error messages. Returns
/// the solution and the reciprocal condition number.
pub fn solve_gated(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<(DVector<f64>, f64)> {
    let (svd, rcond) = gated_svd(a, what)?;
    let x = svd
        .solve(b, 0.0)
        .map_err(|e| Error::Numerical(format!("SVD solve of {what} failed: {e}")))?;
    Ok((DVector::from_column_slice(x.as_slice()), rcond))
}

/// Invert `a` with the same reciprocal-condition gate as [`solve_gated`].
pub fn invert_gated(a: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let (svd, rcond) = gated_svd(a, what)?;
    let inv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Numerical(format!("SVD inverse of {what} failed: {e}")))?;
    Ok((inv, rcond))
}

/// Accumulator for (optionally weighted, optionally ridged) normal
/// equations `X' W X  b = X' W y`, built one row at a time so callers never
/// materialise a design matrix.
pub struct NormalEq {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    rows: usize,
}

impl NormalEq {
    pub fn new(p: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
            rows: 0,
        }
    }

    /// Add one observation with weight `w`.
    pub fn add(&mut self, x: &[f64], y: f64, w: f64) {
        debug_assert_eq!(x.len(), self.xty.len());
        for i in 0..x.len() {
            let wxi = w * x[i];
            for j in i..x.len() {
                self.xtx[(i, j)] += wxi * x[j];
            }
            self.xty[i] += wxi * y;
        }
        self.rows += 1;
    }

    /// Add `lambda` to the diagonal entries starting at column `skip`
    /// (ridge penalty that leaves the leading `skip` coefficients free).
    pub fn add_ridge(&mut self, lambda: f64, skip: usize) {
        for i in skip..self.xty.len() {
            self.xtx[(i, i)] += lambda;
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn symmetrised(&self) -> DMatrix<f64> {
        let mut m = self.xtx.clone();
        for i in 0..m.nrows() {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    /// The accumulated `X' W X` (symmetric).
    pub fn xtx(&self) -> DMatrix<f64> {
        self.symmetrised()
    }

    /// Solve the accumulated system, gated on conditioning.
    pub fn solve(&self, what: &str) -> Result<(DVector<f64>, f64)> {
        solve_gated(&self.symmetrised(), &self.xty, what)
    }
}

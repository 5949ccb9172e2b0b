//! Clamped B-spline design columns.
//!
//! A basis is built from training values: boundary knots at the observed
//! extremes, interior knots at evenly spaced quantiles, degree
//! `min(3, df)`. The full clamped basis of `df + 1` functions sums to one,
//! so the leading function is dropped to keep the columns linearly
//! independent of an intercept; `df` columns remain. Evaluation clamps its
//! input to the training range (constant extrapolation), which keeps
//! predictions finite and deterministic for mildly out-of-range points.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
    df: usize,
}

/// Type-7 (linear interpolation) sample quantile of already-sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

impl BSplineBasis {
    /// Build a `df`-column basis from training values.
    ///
    /// Errors when `df` is zero, when any value is non-finite, or when there
    /// are fewer distinct values than degrees of freedom (such a basis would
    /// be rank deficient by construction).
    pub fn from_data(values: &[f64], df: usize) -> Result<Self> {
        if df == 0 {
            return Err(Error::Spec(
                "B-spline basis needs at least 1 degree of freedom".into(),
            ));
        }
        if values.is_empty() {
            return Err(Error::Spec("B-spline basis built from no values".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {bad} among B-spline training values"
            )));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = 1usize;
        for w in sorted.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        let need = df.max(2);
        if distinct < need {
            return Err(Error::Spec(format!(
                "B-spline with {df} degrees of freedom needs at least {need} \
                 distinct values, found {distinct}"
            )));
        }

        let degree = df.min(3);
        let n_interior = df - degree;
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let mut knots = Vec::with_capacity(2 * (degree + 1) + n_interior);
        knots.extend(std::iter::repeat(lo).take(degree + 1));
        for k in 1..=n_interior {
            knots.push(quantile_sorted(&sorted, k as f64 / (n_interior + 1) as f64));
        }
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Ok(Self { knots, degree, df })
    }

    pub fn df(&self) -> usize {
        self.df
    }

    /// The full clamped knot vector (boundary knots repeated `degree + 1`
    /// times), mainly useful for diagnostics.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Evaluate the `df` basis columns at `x` (clamped to the training
    /// range), appending them to `out`.
    pub fn eval_into(&self, x: f64, out: &mut Vec<f64>) {
        let d = self.degree;
        let kn = &self.knots;
        let n_basis = self.df + 1;
        let lo = kn[d];
        let hi = kn[n_basis];
        let x = x.clamp(lo, hi);

        // Knot span containing x; the upper boundary belongs to the last span.
        let mut span = d;
        while span + 1 < n_basis && x >= kn[span + 1] {
            span += 1;
        }

        // Cox–de Boor recurrence for the d + 1 basis functions that are
        // nonzero on this span (0/0 from repeated knots is taken as 0).
        let mut vals = [0.0f64; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        vals[0] = 1.0;
        for j in 1..=d {
            left[j] = x - kn[span + 1 - j];
            right[j] = kn[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let temp = if den != 0.0 { vals[r] / den } else { 0.0 };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }

        let start = out.len();
        out.resize(start + self.df, 0.0);
        for (r, &v) in vals.iter().take(d + 1).enumerate() {
            let idx = span - d + r;
            // Basis function 0 is the one dropped against the intercept.
            if idx >= 1 {
                out[start + idx - 1] = v;
            }
        }
    }

    /// Convenience wrapper around [`eval_into`](Self::eval_into).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.df);
        self.eval_into(x, &mut out);
        out
    }
}

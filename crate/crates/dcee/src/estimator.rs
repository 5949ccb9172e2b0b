//! The distal-effect estimator: estimating function, closed-form solve,
//! sandwich variance, and the cross-fitted variant.
//!
//! For person i with end-of-study outcome Y and decision-point rows
//! (I_t, A_t, p_t, S_t), the per-person estimating function is
//!
//! ```text
//! phi_i(beta, mu) = sum_t omega(t) * [U_t - f(t,S_t)' beta] * f(t,S_t)
//! U_t = I_t * (-1)^(1-A_t) / p_t(A_t|H_t)
//!       * { Y - (1-p_t) mu(H_t,1) - p_t mu(H_t,0) }
//! ```
//!
//! with U_t = 0 at ineligible points while the centering term -f'beta * f
//! still contributes there. The inverse-probability contrast in U_t has
//! conditional mean zero under the trial's randomization whatever `mu` is,
//! which makes the solution consistent for the projection coefficients for
//! *any* outcome model — a wrong model only costs variance. phi is affine in
//! beta, so the root of its empirical mean is a p-by-p linear solve:
//!
//! ```text
//! beta_hat = B^-1 m,  B = P_n sum_t omega f f',  m = P_n sum_t omega U_t f
//! ```
//!
//! and the sandwich variance is B^-1 (P_n phi phi') B^-T evaluated at
//! beta_hat. Cross-fitting replaces the single fitted outcome model with
//! per-fold models (fold k predicted by the model trained off fold k) and
//! averages fold-wise empirical means, which amounts to reweighting persons
//! by 1/(K * fold size).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::{validate, DecisionRow, MrtDataset, DEFAULT_POSITIVITY_CLIP};
use crate::error::{Error, Result};
use crate::features::{build_features, build_weights, EstimandSpec, FeatureSet};
use crate::linalg::solve_gated;
use crate::nuisance::{fit_outcome_model, make_folds, FoldAssignment, LearnerKind, LearnerSpec};

/// Relative tolerance for the post-solve root check.
pub const ROOT_TOLERANCE: f64 = 1e-10;

fn default_ci_level() -> f64 {
    0.95
}
fn default_positivity_clip() -> f64 {
    DEFAULT_POSITIVITY_CLIP
}

/// Tuning knobs for [`estimate_dcee`] beyond the estimand and learner.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// 0 disables cross-fitting; otherwise the number of folds K.
    #[serde(alias = "crossfit_K")]
    pub crossfit_k: usize,
    /// Seed for the fold shuffle (unused when `crossfit_k = 0`).
    pub seed: u64,
    /// Two-sided confidence level.
    pub ci_level: f64,
    /// Use a t quantile with n - p degrees of freedom instead of the normal
    /// quantile; off by default (the normal approximation is the asymptotic
    /// one).
    pub use_t_quantile: bool,
    /// Positivity bound for pre-fit validation: eligible randomization
    /// probabilities must lie inside `(clip, 1 - clip)`.
    pub positivity_clip: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            crossfit_k: 0,
            seed: 0,
            ci_level: default_ci_level(),
            use_t_quantile: false,
            positivity_clip: default_positivity_clip(),
        }
    }
}

/// Numerical health of a fit, kept alongside the estimates.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FitDiagnostics {
    /// Reciprocal condition number of the bread matrix.
    pub bread_rcond: f64,
    /// `max_j |P_n phi_j(beta_hat)|` — should be solver noise.
    pub max_root_residual: f64,
    /// The bound `max_root_residual` was checked against.
    pub root_tolerance: f64,
    pub seed: u64,
    /// Folds whose outcome-model fit fell back to the mean-only learner
    /// because an arm had too few rows.
    pub fold_fallbacks: Vec<usize>,
    /// The learner that was requested (fallbacks are per fold, above).
    pub nuisance_kind: LearnerKind,
}

/// A fitted distal-effect model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DceeFit {
    /// Column names of f(t, S_t), aligned with `beta`.
    pub feature_names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Row-major p-by-p covariance of `beta` (already divided by n).
    pub vcov: Vec<f64>,
    pub n: usize,
    pub horizon: u32,
    pub ci_level: f64,
    /// 0 when fitted without cross-fitting.
    pub crossfit_k: usize,
    pub diagnostics: FitDiagnostics,
}

impl DceeFit {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// The aligned ingredients of one person's estimating function, for direct
/// evaluation in tests and diagnostics.
pub struct PhiTerms<'a> {
    /// U_t per decision point (zero where ineligible).
    pub u: &'a [f64],
    /// Row-major T-by-p feature values.
    pub features: &'a [f64],
    /// omega(t) per decision point.
    pub weights: &'a [f64],
}

/// The inverse-probability residual contrast U_t for one row.
///
/// Returns 0 for ineligible rows without touching `prob` (which may be
/// missing there). At eligible rows the randomization probability must lie
/// strictly inside (0, 1).
pub fn residual_term(row: &DecisionRow, outcome: f64, mu1: f64, mu0: f64) -> Result<f64> {
    if !row.elig {
        return Ok(0.0);
    }
    let p = row.prob;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Data(format!(
            "randomization probability {p} at an eligible row is outside (0, 1)"
        )));
    }
    let bracket = outcome - (1.0 - p) * mu1 - p * mu0;
    if row.treat {
        Ok(bracket / p)
    } else {
        Ok(-(bracket / (1.0 - p)))
    }
}

/// Evaluate one person's estimating function at `beta`.
pub fn phi_person(terms: &PhiTerms, beta: &[f64]) -> Result<Vec<f64>> {
    let t_len = terms.u.len();
    let p = beta.len();
    if terms.weights.len() != t_len || terms.features.len() != t_len * p {
        return Err(Error::Spec(format!(
            "estimating-function terms are misaligned: {} U values, {} weights, \
             {} feature values for p={p}",
            terms.u.len(),
            terms.weights.len(),
            terms.features.len()
        )));
    }
    let mut phi = vec![0.0; p];
    for t in 0..t_len {
        let f = &terms.features[t * p..(t + 1) * p];
        let fitted: f64 = f.iter().zip(beta).map(|(a, b)| a * b).sum();
        let scale = terms.weights[t] * (terms.u[t] - fitted);
        for (acc, &fj) in phi.iter_mut().zip(f) {
            *acc += scale * fj;
        }
    }
    Ok(phi)
}

/// Per-person pooling weights: plain 1/n, or 1/(K * fold size) under
/// cross-fitting so the estimating equation averages fold-wise means.
fn person_weights(ds: &MrtDataset, folds: Option<&FoldAssignment>) -> Result<Vec<f64>> {
    let n = ds.n();
    match folds {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(f) => {
            let sizes = f.sizes();
            ds.trajectories()
                .iter()
                .map(|traj| {
                    let k = f.fold_of(&traj.id).ok_or_else(|| {
                        Error::Spec(format!("person '{}' has no fold assignment", traj.id))
                    })?;
                    Ok(1.0 / (f.k() as f64 * sizes[k] as f64))
                })
                .collect()
        }
    }
}

/// U_t for every row, given per-row outcome-model predictions
/// `(mu1, mu0)` aligned with the dataset's flat row order. Predictions at
/// ineligible rows are never read.
fn u_from_mu(ds: &MrtDataset, mu_preds: &[(f64, f64)]) -> Result<Vec<f64>> {
    if mu_preds.len() != ds.n_rows() {
        return Err(Error::Spec(format!(
            "got {} outcome-model predictions for {} rows",
            mu_preds.len(),
            ds.n_rows()
        )));
    }
    let mut u = vec![0.0; ds.n_rows()];
    for (i, traj) in ds.trajectories().iter().enumerate() {
        for row in &traj.rows {
            let r = ds.row_index(i, row.t);
            if row.elig {
                let (mu1, mu0) = mu_preds[r];
                u[r] = residual_term(row, traj.outcome, mu1, mu0).map_err(|e| match e {
                    Error::Data(msg) => {
                        Error::Data(format!("person '{}', t={}: {msg}", traj.id, row.t))
                    }
                    other => other,
                })?;
            }
        }
    }
    Ok(u)
}

fn bread_and_rhs(
    ds: &MrtDataset,
    feats: &FeatureSet,
    t_weights: &[f64],
    u: &[f64],
    person_w: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = feats.dim();
    let mut bread = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut x = DVector::zeros(p);
    for (i, traj) in ds.trajectories().iter().enumerate() {
        let wi = person_w[i];
        for row in &traj.rows {
            let r = ds.row_index(i, row.t);
            x.copy_from_slice(feats.row(r));
            let w = wi * t_weights[row.t as usize - 1];
            bread.ger(w, &x, &x, 1.0);
            rhs.axpy(w * u[r], &x, 1.0);
        }
    }
    (bread, rhs)
}

/// Sum of weighted per-person phi outer products (the meat) and the weighted
/// mean of phi itself (the residual of the estimating equation, which should
/// be numerically zero at the solution).
fn meat_and_root(
    ds: &MrtDataset,
    feats: &FeatureSet,
    t_weights: &[f64],
    u: &[f64],
    person_w: &[f64],
    beta: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = feats.dim();
    let mut meat = DMatrix::zeros(p, p);
    let mut root = DVector::zeros(p);
    let mut phi = DVector::zeros(p);
    for (i, traj) in ds.trajectories().iter().enumerate() {
        phi.fill(0.0);
        for row in &traj.rows {
            let r = ds.row_index(i, row.t);
            let f = feats.row(r);
            let fitted: f64 = f.iter().zip(beta).map(|(a, b)| a * b).sum();
            let scale = t_weights[row.t as usize - 1] * (u[r] - fitted);
            for (acc, &fj) in phi.iter_mut().zip(f) {
                *acc += scale * fj;
            }
        }
        let wi = person_w[i];
        meat.ger(wi, &phi, &phi, 1.0);
        root.axpy(wi, &phi, 1.0);
    }
    (meat, root)
}

struct Solved {
    beta: Vec<f64>,
    bread: DMatrix<f64>,
    rcond: f64,
    rhs_inf: f64,
}

fn solve_core(
    ds: &MrtDataset,
    feats: &FeatureSet,
    t_weights: &[f64],
    u: &[f64],
    person_w: &[f64],
) -> Result<Solved> {
    let (bread, rhs) = bread_and_rhs(ds, feats, t_weights, u, person_w);
    let (beta, rcond) = solve_gated(&bread, &rhs, "bread matrix")?;
    Ok(Solved {
        beta: beta.iter().copied().collect(),
        bread,
        rcond,
        rhs_inf: rhs.amax(),
    })
}

/// Solve the estimating equation for given per-row outcome-model
/// predictions (no cross-fitting weights).
pub fn solve_beta(
    ds: &MrtDataset,
    spec: &EstimandSpec,
    mu_preds: &[(f64, f64)],
) -> Result<Vec<f64>> {
    let feats = build_features(ds, spec)?;
    let t_weights = build_weights(&spec.weight, ds.horizon())?;
    let u = u_from_mu(ds, mu_preds)?;
    let person_w = person_weights(ds, None)?;
    Ok(solve_core(ds, &feats, &t_weights, &u, &person_w)?.beta)
}

/// Sandwich covariance of `beta_hat` (already divided by n), given the same
/// predictions that produced it. Pass the fold assignment used for
/// cross-fitting, if any, so persons are reweighted fold-wise.
pub fn sandwich_variance(
    ds: &MrtDataset,
    spec: &EstimandSpec,
    mu_preds: &[(f64, f64)],
    beta_hat: &[f64],
    folds: Option<&FoldAssignment>,
) -> Result<Vec<f64>> {
    let feats = build_features(ds, spec)?;
    if beta_hat.len() != feats.dim() {
        return Err(Error::Spec(format!(
            "beta has length {}, feature dimension is {}",
            beta_hat.len(),
            feats.dim()
        )));
    }
    let t_weights = build_weights(&spec.weight, ds.horizon())?;
    let u = u_from_mu(ds, mu_preds)?;
    let person_w = person_weights(ds, folds)?;
    let (bread, _) = bread_and_rhs(ds, &feats, &t_weights, &u, &person_w);
    let (meat, _) = meat_and_root(ds, &feats, &t_weights, &u, &person_w, beta_hat);
    let vcov = vcov_from(&bread, &meat, ds.n())?;
    Ok(vcov.as_slice().to_vec())
}

/// B^-1 M B^-T / n, symmetrized. nalgebra stores column-major, but the
/// result is symmetric so the returned buffer reads correctly row-major too.
fn vcov_from(bread: &DMatrix<f64>, meat: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let (binv, _) = crate::linalg::invert_gated(bread, "bread matrix")?;
    let v = &binv * meat * binv.transpose();
    let sym = (&v + v.transpose()) * (0.5 / n as f64);
    Ok(sym)
}

fn ci_quantile(opts: &EstimateOptions, n: usize, p: usize) -> Result<f64> {
    if !(opts.ci_level > 0.0 && opts.ci_level < 1.0) {
        return Err(Error::Spec(format!(
            "ci_level must be strictly between 0 and 1, got {}",
            opts.ci_level
        )));
    }
    let tail = 0.5 + opts.ci_level / 2.0;
    if opts.use_t_quantile {
        let df = n as f64 - p as f64;
        if df < 1.0 {
            return Err(Error::Spec(format!(
                "t-quantile needs n - p >= 1 (n={n}, p={p})"
            )));
        }
        let t = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
        Ok(t.inverse_cdf(tail))
    } else {
        let norm = Normal::new(0.0, 1.0).expect("unit normal");
        Ok(norm.inverse_cdf(tail))
    }
}

/// Fit the distal-effect model.
///
/// `crossfit_k = 0` fits the outcome model once on everyone; `k >= 2` uses
/// k-fold cross-fitting (fold k's rows are predicted by the model trained on
/// its complement). Either way the estimating equation stays affine in beta
/// and is solved in closed form; inference is by sandwich variance.
///
/// If a fold's training split leaves a treatment arm too small for the
/// requested learner, that fold falls back to the mean-only learner and the
/// fold index is recorded in the diagnostics. Any other failure aborts.
pub fn estimate_dcee(
    ds: &MrtDataset,
    estimand: &EstimandSpec,
    learner: &LearnerSpec,
    opts: &EstimateOptions,
) -> Result<DceeFit> {
    let report = validate(ds, opts.positivity_clip)?;
    if !report.ok {
        return Err(report.into_error());
    }
    if opts.crossfit_k == 1 {
        return Err(Error::Spec(
            "crossfit_k must be 0 (disabled) or at least 2".into(),
        ));
    }

    let feats = build_features(ds, estimand)?;
    let t_weights = build_weights(&estimand.weight, ds.horizon())?;
    let n = ds.n();
    let p = feats.dim();

    // Per-row (mu1, mu0); NaN at ineligible rows, which are never read.
    let mut mu_preds = vec![(f64::NAN, f64::NAN); ds.n_rows()];
    let mut fold_fallbacks = Vec::new();
    let folds;
    if opts.crossfit_k == 0 {
        folds = None;
        let all: Vec<usize> = (0..n).collect();
        let model = fit_outcome_model(ds, &all, learner)?;
        predict_into(ds, &all, &model, &mut mu_preds)?;
    } else {
        let ids: Vec<String> = ds.trajectories().iter().map(|t| t.id.clone()).collect();
        let assignment = make_folds(&ids, opts.crossfit_k, opts.seed)?;
        for k in 0..assignment.k() {
            let mut train = Vec::new();
            let mut held = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                if assignment.fold_of(id) == Some(k) {
                    held.push(i);
                } else {
                    train.push(i);
                }
            }
            let model = match fit_outcome_model(ds, &train, learner) {
                Ok(m) => m,
                Err(Error::EmptyArm { .. }) if learner.kind != LearnerKind::MeanOnly => {
                    fold_fallbacks.push(k);
                    fit_outcome_model(ds, &train, &LearnerSpec::mean_only())?
                }
                Err(e) => return Err(e),
            };
            predict_into(ds, &held, &model, &mut mu_preds)?;
        }
        folds = Some(assignment);
    }

    let u = u_from_mu(ds, &mu_preds)?;
    let person_w = person_weights(ds, folds.as_ref())?;
    let solved = solve_core(ds, &feats, &t_weights, &u, &person_w)?;
    let (meat, root) = meat_and_root(ds, &feats, &t_weights, &u, &person_w, &solved.beta);

    let max_root_residual = root.amax();
    let root_bound = ROOT_TOLERANCE * (1.0 + solved.rhs_inf);
    if !(max_root_residual <= root_bound) {
        return Err(Error::Numerical(format!(
            "estimating-equation residual {max_root_residual:.3e} exceeds {root_bound:.3e} \
             after the closed-form solve (seed {})",
            opts.seed
        )));
    }

    let vcov = vcov_from(&solved.bread, &meat, n)?;
    let q = ci_quantile(opts, n, p)?;
    let se: Vec<f64> = (0..p).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let ci_lower: Vec<f64> = solved.beta.iter().zip(&se).map(|(b, s)| b - q * s).collect();
    let ci_upper: Vec<f64> = solved.beta.iter().zip(&se).map(|(b, s)| b + q * s).collect();

    Ok(DceeFit {
        feature_names: feats.names().to_vec(),
        beta: solved.beta,
        se,
        ci_lower,
        ci_upper,
        vcov: vcov.as_slice().to_vec(),
        n,
        horizon: ds.horizon(),
        ci_level: opts.ci_level,
        crossfit_k: opts.crossfit_k,
        diagnostics: FitDiagnostics {
            bread_rcond: solved.rcond,
            max_root_residual,
            root_tolerance: root_bound,
            seed: opts.seed,
            fold_fallbacks,
            nuisance_kind: learner.kind,
        },
    })
}

fn predict_into(
    ds: &MrtDataset,
    persons: &[usize],
    model: &crate::nuisance::OutcomeModel,
    mu_preds: &mut [(f64, f64)],
) -> Result<()> {
    let mut scratch = Vec::new();
    for &i in persons {
        let traj = &ds.trajectories()[i];
        for row in &traj.rows {
            if row.elig {
                let r = ds.row_index(i, row.t);
                let mu1 = model.predict_mu_with(row, true, &mut scratch)?;
                let mu0 = model.predict_mu_with(row, false, &mut scratch)?;
                mu_preds[r] = (mu1, mu0);
            }
        }
    }
    Ok(())
}

/// The plain inverse-probability estimator: identical machinery with the
/// outcome model pinned to zero. Provided as a reference; it is consistent
/// but less efficient than [`estimate_dcee`].
pub fn xi_estimate(ds: &MrtDataset, spec: &EstimandSpec) -> Result<Vec<f64>> {
    solve_beta(ds, spec, &vec![(0.0, 0.0); ds.n_rows()])
}

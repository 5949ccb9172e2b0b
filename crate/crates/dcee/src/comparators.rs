//! Baseline methods a practitioner might reach for instead of the excursion
//! estimator: a pooled GEE-style regression with working independence and a
//! weighted-centered least squares fit aimed at proximal effects, here
//! pointed at the distal outcome.
//!
//! Both are deliberately *not* fixed up. They ignore the single-point
//! deviation structure of the estimand — GEE pools treatment occasions as if
//! their effects were exchangeable and confounding were linear, and WCLS
//! targets a proximal contrast that does not discount downstream eligibility
//! and carryover — so on data with time-varying effects and feedback they
//! are biased for the per-point effect projection. The benchmark suite
//! exists to show that contrast, not to rehabilitate them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{validate, DecisionRow, MrtDataset, Trajectory, DEFAULT_POSITIVITY_CLIP};
use crate::error::{Error, Result};
use crate::features::{EstimandSpec, FeatureBuilder};
use crate::linalg::{invert_gated, NormalEq};

/// A fitted baseline: treatment-effect coefficients only, with
/// person-clustered sandwich uncertainty. Control-term coefficients are not
/// reported — they are nuisance parameters of the working model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ComparatorFit {
    /// `"gee"` or `"wcls"`.
    pub method: String,
    pub effect_names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Row-major covariance of `beta` (effect terms only).
    pub vcov: Vec<f64>,
    pub n: usize,
    pub ci_level: f64,
    /// The centering probability used by WCLS; absent for GEE.
    pub p_tilde: Option<f64>,
}

impl ComparatorFit {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// Weighted least squares with a person-clustered sandwich.
///
/// `fill_row` writes one design row into the scratch buffer and returns its
/// weight, or `None` to leave the row out of the fit. Returns the
/// coefficients and their full covariance B^-1 (sum_i s_i s_i^T) B^-T with
/// s_i the person-level weighted residual score.
fn clustered_wls<F>(
    ds: &MrtDataset,
    p: usize,
    what: &str,
    mut fill_row: F,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: FnMut(&Trajectory, &DecisionRow, &mut Vec<f64>) -> Result<Option<f64>>,
{
    let mut neq = NormalEq::new(p);
    let mut x = Vec::with_capacity(p);
    for traj in ds.trajectories() {
        for row in &traj.rows {
            if let Some(w) = fill_row(traj, row, &mut x)? {
                neq.add(&x, traj.outcome, w);
            }
        }
    }
    if neq.rows() < p {
        return Err(Error::Data(format!(
            "{what}: {} rows entered the fit but the design has {p} columns",
            neq.rows()
        )));
    }
    let (coef, _) = neq.solve(what)?;

    let mut meat = DMatrix::<f64>::zeros(p, p);
    let mut score = DVector::<f64>::zeros(p);
    let mut xv = DVector::<f64>::zeros(p);
    for traj in ds.trajectories() {
        score.fill(0.0);
        for row in &traj.rows {
            if let Some(w) = fill_row(traj, row, &mut x)? {
                xv.copy_from_slice(&x);
                let resid = traj.outcome - xv.dot(&coef);
                score.axpy(w * resid, &xv, 1.0);
            }
        }
        meat.ger(1.0, &score, &score, 1.0);
    }
    let (bread_inv, _) = invert_gated(&neq.xtx(), what)?;
    let mut vcov = &bread_inv * meat * bread_inv.transpose();
    // Symmetrize away the last-bit asymmetry of the triple product.
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (vcov[(i, j)] + vcov[(j, i)]);
            vcov[(i, j)] = s;
            vcov[(j, i)] = s;
        }
    }
    Ok((coef, vcov))
}

fn check_ci_level(ci_level: f64) -> Result<f64> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::Spec(format!(
            "ci_level must be in (0, 1), got {ci_level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + ci_level / 2.0))
}

fn effect_summary(
    method: &str,
    effect_names: Vec<String>,
    coef: &DVector<f64>,
    vcov: &DMatrix<f64>,
    effect_idx: &[usize],
    n: usize,
    ci_level: f64,
    z: f64,
    p_tilde: Option<f64>,
) -> ComparatorFit {
    let k = effect_idx.len();
    let beta: Vec<f64> = effect_idx.iter().map(|&j| coef[j]).collect();
    let se: Vec<f64> = effect_idx.iter().map(|&j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let mut sub = Vec::with_capacity(k * k);
    for &i in effect_idx {
        for &j in effect_idx {
            sub.push(vcov[(i, j)]);
        }
    }
    ComparatorFit {
        method: method.into(),
        effect_names,
        ci_lower: beta.iter().zip(&se).map(|(b, s)| b - z * s).collect(),
        ci_upper: beta.iter().zip(&se).map(|(b, s)| b + z * s).collect(),
        beta,
        se,
        vcov: sub,
        n,
        ci_level,
        p_tilde,
    }
}

fn covariate_or_err(traj: &Trajectory, row: &DecisionRow, col: usize, name: &str) -> Result<f64> {
    let v = row.covariates[col];
    if v.is_nan() {
        return Err(Error::Data(format!(
            "covariate '{name}' is missing for person '{}' at t={}",
            traj.id, row.t
        )));
    }
    Ok(v)
}

/// Pooled working-independence regression of the outcome on treatment and
/// covariates.
///
/// Every decision point of every person contributes one row; the design is
/// {1, A, covariates} plus A x moderator columns when the estimand names
/// moderators. The reported coefficients are those on A and the
/// interactions, with person-clustered sandwich standard errors. The pooled
/// model treats all occasions' effects as one number per term, which is
/// exactly the misreading of a distal trial this baseline represents.
pub fn estimate_gee(ds: &MrtDataset, spec: &EstimandSpec, ci_level: f64) -> Result<ComparatorFit> {
    let report = validate(ds, DEFAULT_POSITIVITY_CLIP)?;
    if !report.ok {
        return Err(report.into_error());
    }
    spec.check_against(ds.covariate_names())?;
    let z = check_ci_level(ci_level)?;

    let cov_names = ds.covariate_names();
    let n_cov = cov_names.len();
    let mod_cols: Vec<usize> = spec
        .moderators
        .iter()
        .map(|m| ds.covariate_index(m).expect("checked against covariates"))
        .collect();
    let p = 2 + n_cov + mod_cols.len();

    let (coef, vcov) = clustered_wls(ds, p, "pooled regression design", |traj, row, x| {
        x.clear();
        x.push(1.0);
        let a = f64::from(row.treat);
        x.push(a);
        for (c, name) in cov_names.iter().enumerate() {
            x.push(covariate_or_err(traj, row, c, name)?);
        }
        for &c in &mod_cols {
            x.push(a * row.covariates[c]);
        }
        Ok(Some(1.0))
    })?;

    let mut effect_names = vec!["A".to_string()];
    effect_names.extend(spec.moderators.iter().map(|m| format!("A:{m}")));
    let mut effect_idx = vec![1usize];
    effect_idx.extend((0..mod_cols.len()).map(|k| 2 + n_cov + k));

    Ok(effect_summary(
        "gee",
        effect_names,
        &coef,
        &vcov,
        &effect_idx,
        ds.n(),
        ci_level,
        z,
        None,
    ))
}

/// Weighted-centered least squares pointed at the distal outcome.
///
/// Only eligible rows enter. The design is {1, covariates,
/// (A - p_tilde) f(t, S_t)} with f the estimand's feature vector, each row
/// weighted by p_tilde^A (1 - p_tilde)^(1-A) / p_t(A|H_t). The coefficients
/// on the centered-treatment block are reported. `p_tilde` defaults to the
/// empirical treated fraction among eligible rows when not supplied. The
/// method estimates a proximal contrast, so as a distal-effect estimate it
/// misses eligibility and carryover discounting by construction.
pub fn estimate_wcls(
    ds: &MrtDataset,
    spec: &EstimandSpec,
    p_tilde: Option<f64>,
    ci_level: f64,
) -> Result<ComparatorFit> {
    let report = validate(ds, DEFAULT_POSITIVITY_CLIP)?;
    if !report.ok {
        return Err(report.into_error());
    }
    spec.check_against(ds.covariate_names())?;
    let z = check_ci_level(ci_level)?;
    let builder = FeatureBuilder::new(spec, ds.horizon())?;

    let p_tilde = match p_tilde {
        Some(v) => {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Spec(format!("p_tilde must be in (0, 1), got {v}")));
            }
            v
        }
        None => {
            let (mut treated, mut eligible) = (0u64, 0u64);
            for traj in ds.trajectories() {
                for row in &traj.rows {
                    if row.elig {
                        eligible += 1;
                        treated += row.treat as u64;
                    }
                }
            }
            if eligible == 0 {
                return Err(Error::Data("no eligible rows to estimate p_tilde from".into()));
            }
            let v = treated as f64 / eligible as f64;
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Data(format!(
                    "empirical treated fraction is {v}; the centered-treatment design is degenerate"
                )));
            }
            v
        }
    };

    let cov_names = ds.covariate_names();
    let n_cov = cov_names.len();
    let mod_cols: Vec<usize> = spec
        .moderators
        .iter()
        .map(|m| ds.covariate_index(m).expect("checked against covariates"))
        .collect();
    let p_f = builder.dim();
    let p = 1 + n_cov + p_f;

    let mut s_vals = Vec::with_capacity(mod_cols.len());
    let mut f_vals = Vec::with_capacity(p_f);
    let (coef, vcov) = clustered_wls(ds, p, "centered-treatment design", |traj, row, x| {
        if !row.elig {
            return Ok(None);
        }
        x.clear();
        x.push(1.0);
        for (c, name) in cov_names.iter().enumerate() {
            x.push(covariate_or_err(traj, row, c, name)?);
        }
        s_vals.clear();
        s_vals.extend(mod_cols.iter().map(|&c| row.covariates[c]));
        f_vals.clear();
        builder.eval_into(row.t, &s_vals, &mut f_vals)?;
        let a = f64::from(row.treat);
        for &f in &f_vals {
            x.push((a - p_tilde) * f);
        }
        let w = if row.treat {
            p_tilde / row.prob
        } else {
            (1.0 - p_tilde) / (1.0 - row.prob)
        };
        Ok(Some(w))
    })?;

    let effect_idx: Vec<usize> = (1 + n_cov..p).collect();
    Ok(effect_summary(
        "wcls",
        builder.names().to_vec(),
        &coef,
        &vcov,
        &effect_idx,
        ds.n(),
        ci_level,
        z,
        Some(p_tilde),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use crate::simulator::{default_sim_params, simulate_dataset, PolicySpec};

    /// Hand-built dataset: 2 decision points, constant prob, X covariate,
    /// outcomes from an exact linear rule when `slope` terms are given.
    fn linear_dataset(n: usize, f: impl Fn(usize, bool, bool, f64, f64) -> f64) -> MrtDataset {
        let trajectories: Vec<Trajectory> = (0..n)
            .map(|i| {
                let x1 = (i % 7) as f64 - 3.0;
                let x2 = (i % 5) as f64 - 2.0;
                let a1 = i % 2 == 0;
                let a2 = i % 3 == 0;
                Trajectory {
                    id: format!("p{i}"),
                    rows: vec![
                        DecisionRow {
                            t: 1,
                            elig: true,
                            treat: a1,
                            prob: 0.5,
                            covariates: vec![x1],
                        },
                        DecisionRow {
                            t: 2,
                            elig: true,
                            treat: a2,
                            prob: 0.5,
                            covariates: vec![x2],
                        },
                    ],
                    outcome: f(i, a1, a2, x1, x2),
                }
            })
            .collect();
        MrtDataset::new(vec!["X".to_string()], trajectories).unwrap()
    }

    #[test]
    fn zero_outcome_gives_zero_effects() {
        let ds = linear_dataset(60, |_, _, _, _, _| 0.0);
        let spec = EstimandSpec::marginal();
        let gee = estimate_gee(&ds, &spec, 0.95).unwrap();
        let wcls = estimate_wcls(&ds, &spec, None, 0.95).unwrap();
        for fit in [&gee, &wcls] {
            assert_eq!(fit.dim(), 1);
            assert_eq!(fit.beta[0], 0.0, "{}", fit.method);
            assert_eq!(fit.se[0], 0.0, "{}", fit.method);
        }
        assert_eq!(gee.effect_names, ["A"]);
        assert_eq!(gee.p_tilde, None);
        assert!(wcls.p_tilde.unwrap() > 0.0);
    }

    #[test]
    fn exact_linear_outcome_is_recovered() {
        // One decision point per person, so the row-level working model can
        // be exactly right: Y = 2 + 3A + 0.5X.
        let trajectories: Vec<Trajectory> = (0..140)
            .map(|i| {
                let x = (i % 7) as f64 - 3.0;
                let a = i % 2 == 0;
                Trajectory {
                    id: format!("p{i}"),
                    rows: vec![DecisionRow {
                        t: 1,
                        elig: true,
                        treat: a,
                        prob: 0.5,
                        covariates: vec![x],
                    }],
                    outcome: 2.0 + 3.0 * f64::from(a) + 0.5 * x,
                }
            })
            .collect();
        let ds = MrtDataset::new(vec!["X".to_string()], trajectories).unwrap();
        let gee = estimate_gee(&ds, &EstimandSpec::marginal(), 0.95).unwrap();
        assert!((gee.beta[0] - 3.0).abs() <= 1e-8, "A coefficient {}", gee.beta[0]);
        // The model fits exactly, so residuals and the sandwich vanish.
        assert!(gee.se[0] <= 1e-8);
        // WCLS with matched centering sees the same exact fit:
        // Y = 3.5 + 0.5X + 3(A - 0.5).
        let wcls = estimate_wcls(&ds, &EstimandSpec::marginal(), Some(0.5), 0.95).unwrap();
        assert!((wcls.beta[0] - 3.0).abs() <= 1e-8, "effect {}", wcls.beta[0]);
        assert!(wcls.se[0] <= 1e-8);
    }

    #[test]
    fn translation_in_outcome_leaves_effects_unchanged() {
        let params = default_sim_params();
        let base = simulate_dataset(&params, 150, 42, PolicySpec::Mrt).unwrap();
        let shifted = MrtDataset::new(
            base.covariate_names().to_vec(),
            base.trajectories()
                .iter()
                .map(|tr| Trajectory {
                    outcome: tr.outcome + 100.0,
                    ..tr.clone()
                })
                .collect(),
        )
        .unwrap();
        let spec = EstimandSpec::moderated_by("Z");
        for (a, b) in [
            (
                estimate_gee(&base, &spec, 0.95).unwrap(),
                estimate_gee(&shifted, &spec, 0.95).unwrap(),
            ),
            (
                estimate_wcls(&base, &spec, None, 0.95).unwrap(),
                estimate_wcls(&shifted, &spec, None, 0.95).unwrap(),
            ),
        ] {
            for j in 0..a.dim() {
                assert!(
                    (a.beta[j] - b.beta[j]).abs() <= 1e-7 * (1.0 + a.beta[j].abs()),
                    "{} term {j}: {} vs {}",
                    a.method,
                    a.beta[j],
                    b.beta[j]
                );
            }
        }
    }

    #[test]
    fn wcls_weights_are_unit_when_prob_matches_p_tilde() {
        // p_t constant and equal to the centering probability makes every
        // weight exactly 1, so the fit coincides with the unweighted one.
        let ds = linear_dataset(90, |i, a1, a2, x1, _| {
            f64::from(a1) - 0.5 * f64::from(a2) + 0.25 * x1 + (i % 4) as f64
        });
        let with_match = estimate_wcls(&ds, &EstimandSpec::marginal(), Some(0.5), 0.95).unwrap();
        assert_eq!(with_match.p_tilde, Some(0.5));
        // Weight identity at the row level: 0.5/0.5 and (1-0.5)/(1-0.5).
        assert_eq!(0.5f64 / 0.5, 1.0);
        assert_eq!((1.0 - 0.5f64) / (1.0 - 0.5), 1.0);
        assert!(with_match.beta[0].is_finite());
    }

    #[test]
    fn wcls_rejects_degenerate_centering() {
        let ds = linear_dataset(30, |_, _, _, _, _| 1.0);
        let spec = EstimandSpec::marginal();
        assert!(estimate_wcls(&ds, &spec, Some(0.0), 0.95).is_err());
        assert!(estimate_wcls(&ds, &spec, Some(1.0), 0.95).is_err());
        // All-treated data defeats the empirical default.
        let all_treated = MrtDataset::new(
            vec!["X".to_string()],
            (0..20)
                .map(|i| Trajectory {
                    id: format!("p{i}"),
                    rows: vec![DecisionRow {
                        t: 1,
                        elig: true,
                        treat: true,
                        prob: 0.9,
                        covariates: vec![0.0],
                    }],
                    outcome: 1.0,
                })
                .collect(),
        )
        .unwrap();
        assert!(estimate_wcls(&all_treated, &spec, None, 0.95).is_err());
    }

    #[test]
    fn clustered_vcov_is_symmetric_and_psd() {
        let params = default_sim_params();
        let ds = simulate_dataset(&params, 200, 5, PolicySpec::Mrt).unwrap();
        let spec = EstimandSpec::moderated_by("Z");
        for fit in [
            estimate_gee(&ds, &spec, 0.95).unwrap(),
            estimate_wcls(&ds, &spec, None, 0.95).unwrap(),
        ] {
            let k = fit.dim();
            let v = DMatrix::from_row_slice(k, k, &fit.vcov);
            let tol = 1e-10 * v.trace().abs();
            assert!((v.clone() - v.transpose()).amax() <= tol, "{} asymmetric", fit.method);
            let eig = v.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -tol), "{} eigenvalues {eig:?}", fit.method);
            // CIs bracket the point estimates.
            for j in 0..k {
                assert!(fit.ci_lower[j] <= fit.beta[j] && fit.beta[j] <= fit.ci_upper[j]);
            }
        }
    }

    #[test]
    fn moderated_design_reports_interaction_terms() {
        let params = default_sim_params();
        let ds = simulate_dataset(&params, 120, 9, PolicySpec::Mrt).unwrap();
        let gee = estimate_gee(&ds, &EstimandSpec::moderated_by("Z"), 0.95).unwrap();
        assert_eq!(gee.effect_names, ["A", "A:Z"]);
        let wcls = estimate_wcls(&ds, &EstimandSpec::moderated_by("Z"), None, 0.95).unwrap();
        assert_eq!(wcls.effect_names, ["intercept", "Z"]);
        assert_eq!(wcls.dim(), 2);
    }
}

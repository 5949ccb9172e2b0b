//! Working models for the outcome regression E[Y | history, arm] and the
//! fold bookkeeping for cross-fitting.
//!
//! The estimator stays consistent whatever model is plugged in here — the
//! centering term it feeds into has mean zero for *any* fitted (or even
//! misspecified) outcome regression — so the learners are deliberately
//! simple and deterministic: a grand mean, ordinary least squares on the raw
//! covariates, or ridge-penalized regression with B-spline expansions of
//! designated continuous covariates. Better models reduce variance; none is
//! needed for validity.
//!
//! All learners pool rows across decision points and fit the two arms as
//! separate regressions on eligible rows only (treatment is never delivered
//! at ineligible points, so arm-1 outcomes are unobservable there and the
//! estimator never asks for predictions at such rows).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DecisionRow, MrtDataset};
use crate::error::{Error, Result};
use crate::linalg::NormalEq;
use crate::rng::{domain, unit_rng, StreamKey};
use crate::spline::BSplineBasis;

/// Which outcome-regression family to fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Per-arm grand mean; ignores covariates entirely.
    MeanOnly,
    /// Least squares on an intercept plus all raw covariates.
    Linear,
    /// Ridge-penalized least squares on an intercept, B-spline expansions of
    /// the designated continuous covariates, and the remaining covariates
    /// raw.
    RidgeSpline,
}

/// Outcome-model configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Basis size per designated continuous covariate (ridge-spline only).
    pub spline_df: usize,
    /// Ridge penalty on non-intercept coefficients.
    pub ridge_lambda: f64,
    /// Covariates that get a spline expansion (ridge-spline only); the rest
    /// enter raw.
    pub continuous_covariates: Vec<String>,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::RidgeSpline,
            spline_df: 4,
            ridge_lambda: 1e-6,
            continuous_covariates: Vec::new(),
        }
    }
}

impl LearnerSpec {
    pub fn mean_only() -> Self {
        Self {
            kind: LearnerKind::MeanOnly,
            ridge_lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: LearnerKind::Linear,
            ridge_lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn ridge_spline(continuous_covariates: Vec<String>) -> Self {
        Self {
            continuous_covariates,
            ..Self::default()
        }
    }

    /// Check internal consistency and that designated covariates exist.
    pub fn check_against(&self, covariate_names: &[String]) -> Result<()> {
        if self.spline_df == 0 {
            return Err(Error::Spec("spline_df must be at least 1".into()));
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::Spec(format!(
                "ridge_lambda must be finite and nonnegative, got {}",
                self.ridge_lambda
            )));
        }
        if self.kind != LearnerKind::RidgeSpline && !self.continuous_covariates.is_empty() {
            return Err(Error::Spec(
                "continuous_covariates only apply to the ridge-spline learner".into(),
            ));
        }
        for (i, name) in self.continuous_covariates.iter().enumerate() {
            if self.continuous_covariates[..i].contains(name) {
                return Err(Error::Spec(format!(
                    "covariate '{name}' designated continuous twice"
                )));
            }
            if !covariate_names.iter().any(|n| n == name) {
                return Err(Error::Spec(format!(
                    "continuous covariate '{name}' is not a covariate of the dataset"
                )));
            }
        }
        Ok(())
    }
}

/// Assignment of persons to cross-fitting folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    seed: u64,
    fold_of: HashMap<String, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    /// Number of persons in each fold.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Partition persons into `k` near-equal folds, deterministically in `seed`.
///
/// Ids are sorted, shuffled by a seed-keyed generator, and dealt round-robin,
/// so fold sizes differ by at most one and the assignment is independent of
/// the caller's id order.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = ids.len();
    if k < 2 {
        return Err(Error::Spec(format!(
            "cross-fitting needs at least 2 folds, got {k}"
        )));
    }
    if k > n {
        return Err(Error::Spec(format!("more folds ({k}) than persons ({n})")));
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Spec("person ids must be unique to assign folds".into()));
    }
    let mut rng = unit_rng(StreamKey::new(seed, domain::FOLDS, 0, 0), 0);
    sorted.shuffle(&mut rng);
    let fold_of = sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % k))
        .collect();
    Ok(FoldAssignment { k, seed, fold_of })
}

/// The fitted design recipe: which covariates enter, and how.
#[derive(Clone, Debug)]
struct NuisanceDesign {
    /// Designated continuous covariates: dataset column index, name, fitted
    /// basis (knots frozen from the training rows).
    splines: Vec<(usize, String, BSplineBasis)>,
    /// Covariates entering raw: dataset column index and name.
    raw: Vec<(usize, String)>,
    /// Total columns including the leading intercept.
    p: usize,
}

impl NuisanceDesign {
    fn build_row(&self, covariates: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.push(1.0);
        for (j, name, basis) in &self.splines {
            let v = covariates[*j];
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "covariate '{name}' is missing or non-finite"
                )));
            }
            basis.eval_into(v, out);
        }
        for (j, name) in &self.raw {
            let v = covariates[*j];
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "covariate '{name}' is missing or non-finite"
                )));
            }
            out.push(v);
        }
        Ok(())
    }
}

/// Per-arm fitted outcome regressions sharing one design recipe.
#[derive(Clone, Debug)]
pub struct OutcomeModel {
    design: NuisanceDesign,
    /// Coefficients indexed by arm (0 = untreated, 1 = treated).
    coef: [Vec<f64>; 2],
    rows_used: [usize; 2],
    residual_scale: [f64; 2],
}

impl OutcomeModel {
    /// Columns in the design, including the intercept.
    pub fn n_params(&self) -> usize {
        self.design.p
    }

    /// Eligible training rows the given arm's regression used.
    pub fn rows_used(&self, arm: bool) -> usize {
        self.rows_used[arm as usize]
    }

    /// Root-mean-square training residual of the given arm's regression.
    pub fn residual_scale(&self, arm: bool) -> f64 {
        self.residual_scale[arm as usize]
    }

    pub fn coefficients(&self, arm: bool) -> &[f64] {
        &self.coef[arm as usize]
    }

    /// Predicted mean outcome had the person received `arm` at this row,
    /// using `scratch` to avoid a per-call allocation.
    pub fn predict_mu_with(
        &self,
        row: &DecisionRow,
        arm: bool,
        scratch: &mut Vec<f64>,
    ) -> Result<f64> {
        self.design.build_row(&row.covariates, scratch)?;
        let coef = &self.coef[arm as usize];
        Ok(scratch.iter().zip(coef).map(|(x, c)| x * c).sum())
    }

    /// Allocation-per-call convenience wrapper around [`predict_mu_with`].
    ///
    /// [`predict_mu_with`]: OutcomeModel::predict_mu_with
    pub fn predict_mu(&self, row: &DecisionRow, arm: bool) -> Result<f64> {
        let mut scratch = Vec::with_capacity(self.design.p);
        self.predict_mu_with(row, arm, &mut scratch)
    }
}

/// Fit the two per-arm outcome regressions on the eligible rows of the
/// included persons (indices into the dataset's trajectories).
///
/// Each arm needs at least `p + 1` eligible rows, where `p` counts design
/// columns; otherwise the fit fails with [`Error::EmptyArm`] and the caller
/// can fall back to a smaller learner.
pub fn fit_outcome_model(
    ds: &MrtDataset,
    include: &[usize],
    spec: &LearnerSpec,
) -> Result<OutcomeModel> {
    spec.check_against(ds.covariate_names())?;
    if include.is_empty() {
        return Err(Error::Spec(
            "outcome-model fitting subset contains no persons".into(),
        ));
    }
    let n = ds.n();
    {
        let mut seen = vec![false; n];
        for &i in include {
            if i >= n {
                return Err(Error::Spec(format!(
                    "fitting subset references person index {i}, dataset has {n}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Spec(format!(
                    "fitting subset lists person index {i} twice"
                )));
            }
        }
    }

    let design = build_design(ds, include, spec)?;
    let p = design.p;

    let mut eqs = [NormalEq::new(p), NormalEq::new(p)];
    let mut x = Vec::with_capacity(p);
    for &i in include {
        let traj = &ds.trajectories()[i];
        for row in &traj.rows {
            if !row.elig {
                continue;
            }
            design.build_row(&row.covariates, &mut x).map_err(|e| match e {
                Error::Data(msg) => {
                    Error::Data(format!("person '{}', t={}: {msg}", traj.id, row.t))
                }
                other => other,
            })?;
            eqs[row.treat as usize].add(&x, traj.outcome, 1.0);
        }
    }
    for arm in 0..2 {
        let found = eqs[arm].rows();
        if found < p + 1 {
            return Err(Error::EmptyArm {
                arm: arm as u8,
                found,
                need: p + 1,
            });
        }
    }

    let mut coef: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in 0..2 {
        if spec.ridge_lambda > 0.0 {
            eqs[arm].add_ridge(spec.ridge_lambda, 1);
        }
        let (c, _rcond) = eqs[arm].solve(&format!("outcome-model normal equations (arm {arm})"))?;
        coef[arm] = c.iter().copied().collect();
    }

    // Training-residual scale per arm, for diagnostics.
    let mut sq = [0.0f64; 2];
    for &i in include {
        let traj = &ds.trajectories()[i];
        for row in &traj.rows {
            if !row.elig {
                continue;
            }
            design.build_row(&row.covariates, &mut x)?;
            let arm = row.treat as usize;
            let pred: f64 = x.iter().zip(&coef[arm]).map(|(v, c)| v * c).sum();
            sq[arm] += (traj.outcome - pred).powi(2);
        }
    }
    let rows_used = [eqs[0].rows(), eqs[1].rows()];
    let residual_scale = [
        (sq[0] / rows_used[0] as f64).sqrt(),
        (sq[1] / rows_used[1] as f64).sqrt(),
    ];

    Ok(OutcomeModel {
        design,
        coef,
        rows_used,
        residual_scale,
    })
}

fn build_design(ds: &MrtDataset, include: &[usize], spec: &LearnerSpec) -> Result<NuisanceDesign> {
    let names = ds.covariate_names();
    let (splines, raw) = match spec.kind {
        LearnerKind::MeanOnly => (Vec::new(), Vec::new()),
        LearnerKind::Linear => (
            Vec::new(),
            names
                .iter()
                .enumerate()
                .map(|(j, n)| (j, n.clone()))
                .collect(),
        ),
        LearnerKind::RidgeSpline => {
            let mut splines = Vec::with_capacity(spec.continuous_covariates.len());
            for name in &spec.continuous_covariates {
                let j = ds.covariate_index(name).unwrap();
                let mut values = Vec::new();
                for &i in include {
                    let traj = &ds.trajectories()[i];
                    for row in &traj.rows {
                        if row.elig {
                            let v = row.covariates[j];
                            if !v.is_finite() {
                                return Err(Error::Data(format!(
                                    "covariate '{name}' is missing or non-finite \
                                     at person '{}', t={}",
                                    traj.id, row.t
                                )));
                            }
                            values.push(v);
                        }
                    }
                }
                let basis = BSplineBasis::from_data(&values, spec.spline_df).map_err(
                    |e| match e {
                        Error::Spec(msg) => {
                            Error::Spec(format!("spline basis for covariate '{name}': {msg}"))
                        }
                        other => other,
                    },
                )?;
                splines.push((j, name.clone(), basis));
            }
            let raw = names
                .iter()
                .enumerate()
                .filter(|(_, n)| !spec.continuous_covariates.contains(n))
                .map(|(j, n)| (j, n.clone()))
                .collect();
            (splines, raw)
        }
    };
    let p = 1
        + splines
            .iter()
            .map(|(_, _, b): &(usize, String, BSplineBasis)| b.df())
            .sum::<usize>()
        + raw.len();
    Ok(NuisanceDesign { splines, raw, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn folds_are_near_equal_partitions() {
        let f = make_folds(&ids(10), 5, 7).unwrap();
        assert_eq!(f.sizes(), vec![2, 2, 2, 2, 2]);

        let f = make_folds(&ids(37), 5, 7).unwrap();
        let mut sizes = f.sizes();
        sizes.sort();
        assert_eq!(sizes, vec![7, 7, 7, 8, 8]);
        // Every person lands in exactly one fold.
        for id in ids(37) {
            assert!(f.fold_of(&id).unwrap() < 5);
        }
    }

    #[test]
    fn folds_are_deterministic_in_seed_and_id_order() {
        let a = make_folds(&ids(37), 5, 42).unwrap();
        let b = make_folds(&ids(37), 5, 42).unwrap();
        assert_eq!(a, b);
        // Same persons presented in a different order: same assignment.
        let mut rev = ids(37);
        rev.reverse();
        assert_eq!(make_folds(&rev, 5, 42).unwrap(), a);
        // A different seed moves someone.
        let c = make_folds(&ids(37), 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fold_count_bounds_are_enforced() {
        assert!(make_folds(&ids(10), 1, 0).is_err());
        assert!(make_folds(&ids(10), 11, 0).is_err());
        assert!(make_folds(&ids(10), 10, 0).is_ok());
        let dup = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        assert!(make_folds(&dup, 2, 0).is_err());
    }

    /// One person: eligible rows at t=1 (treated) and t=2 (untreated), with
    /// the given covariate value at both and the given outcome.
    fn two_row_person(id: &str, x: f64, outcome: f64) -> Trajectory {
        let row = |t: u32, treat: bool| DecisionRow {
            t,
            elig: true,
            treat,
            prob: 0.5,
            covariates: vec![x],
        };
        Trajectory {
            id: id.into(),
            rows: vec![row(1, true), row(2, false)],
            outcome,
        }
    }

    #[test]
    fn mean_only_predicts_per_arm_means() {
        // Arm-1 rows carry outcomes {1, 3}; so do arm-0 rows.
        let ds = MrtDataset::new(
            vec!["X".into()],
            vec![two_row_person("a", 0.0, 1.0), two_row_person("b", 9.0, 3.0)],
        )
        .unwrap();
        let model = fit_outcome_model(&ds, &[0, 1], &LearnerSpec::mean_only()).unwrap();
        let row = &ds.trajectories()[0].rows[0];
        assert_eq!(model.predict_mu(row, true).unwrap(), 2.0);
        assert_eq!(model.predict_mu(row, false).unwrap(), 2.0);
        // Mean-only ignores covariates: any row gives the same prediction.
        let other = &ds.trajectories()[1].rows[1];
        assert_eq!(
            model.predict_mu(row, true).unwrap(),
            model.predict_mu(other, true).unwrap()
        );
        assert_eq!(model.rows_used(true), 2);
        assert_eq!(model.rows_used(false), 2);
    }

    #[test]
    fn constant_outcome_is_predicted_everywhere() {
        let ds = MrtDataset::new(
            vec!["X".into()],
            vec![two_row_person("a", 1.0, 3.0), two_row_person("b", 2.0, 3.0)],
        )
        .unwrap();
        let model = fit_outcome_model(&ds, &[0, 1], &LearnerSpec::mean_only()).unwrap();
        for traj in ds.trajectories() {
            for row in &traj.rows {
                assert_eq!(model.predict_mu(row, true).unwrap(), 3.0);
                assert_eq!(model.predict_mu(row, false).unwrap(), 3.0);
                assert_eq!(model.residual_scale(row.treat), 0.0);
            }
        }
    }

    /// One person, a single decision point, fully specified.
    fn one_row_person(id: &str, x: f64, treat: bool, outcome: f64) -> Trajectory {
        Trajectory {
            id: id.into(),
            rows: vec![DecisionRow {
                t: 1,
                elig: true,
                treat,
                prob: 0.5,
                covariates: vec![x],
            }],
            outcome,
        }
    }

    #[test]
    fn linear_learner_recovers_exact_line() {
        // Y = 2 + X exactly, three persons per arm: least squares must
        // interpolate.
        let mut trajs = Vec::new();
        for i in 0..6 {
            let x = i as f64;
            trajs.push(one_row_person(&format!("p{i}"), x, i % 2 == 0, 2.0 + x));
        }
        let ds = MrtDataset::new(vec!["X".into()], trajs).unwrap();
        let model = fit_outcome_model(&ds, &[0, 1, 2, 3, 4, 5], &LearnerSpec::linear()).unwrap();
        for arm in [false, true] {
            let c = model.coefficients(arm);
            assert!((c[0] - 2.0).abs() < 1e-8, "intercept {}", c[0]);
            assert!((c[1] - 1.0).abs() < 1e-8, "slope {}", c[1]);
        }
        let probe = one_row_person("probe", 10.0, true, 0.0);
        assert!((model.predict_mu(&probe.rows[0], true).unwrap() - 12.0).abs() < 1e-7);
    }

    #[test]
    fn ridge_spline_reproduces_linear_signal_at_training_rows() {
        // The clamped cubic basis spans linear functions on the data range,
        // so with a negligible penalty the fit reproduces Y = 1 + 2X.
        let mut trajs = Vec::new();
        for i in 0..12 {
            let x = i as f64 / 3.0;
            trajs.push(one_row_person(&format!("p{i:02}"), x, i % 2 == 0, 1.0 + 2.0 * x));
        }
        let ds = MrtDataset::new(vec!["X".into()], trajs).unwrap();
        let spec = LearnerSpec {
            ridge_lambda: 1e-8,
            ..LearnerSpec::ridge_spline(vec!["X".into()])
        };
        let model = fit_outcome_model(&ds, &(0..12).collect::<Vec<_>>(), &spec).unwrap();
        assert_eq!(model.n_params(), 1 + 4);
        for traj in ds.trajectories() {
            let row = &traj.rows[0];
            let pred = model.predict_mu(row, row.treat).unwrap();
            assert!(
                (pred - traj.outcome).abs() < 1e-6,
                "pred {pred} vs {}",
                traj.outcome
            );
        }
    }

    #[test]
    fn missing_arm_is_reported_with_counts() {
        // Nobody was ever treated: arm 1 cannot be fit.
        let ds = MrtDataset::new(
            vec!["X".into()],
            vec![
                one_row_person("a", 0.0, false, 1.0),
                one_row_person("b", 1.0, false, 2.0),
                one_row_person("c", 2.0, false, 3.0),
            ],
        )
        .unwrap();
        match fit_outcome_model(&ds, &[0, 1, 2], &LearnerSpec::mean_only()) {
            Err(Error::EmptyArm { arm: 1, found: 0, need: 2 }) => {}
            other => panic!("expected EmptyArm, got {other:?}"),
        }
    }

    #[test]
    fn spec_mistakes_are_rejected() {
        let ds = MrtDataset::new(
            vec!["X".into()],
            vec![two_row_person("a", 0.0, 1.0), two_row_person("b", 1.0, 2.0)],
        )
        .unwrap();
        // Designating a continuous covariate only makes sense for
        // ridge-spline.
        let bad = LearnerSpec {
            continuous_covariates: vec!["X".into()],
            ..LearnerSpec::linear()
        };
        assert!(fit_outcome_model(&ds, &[0, 1], &bad).is_err());
        // Unknown covariate.
        assert!(fit_outcome_model(&ds, &[0, 1], &LearnerSpec::ridge_spline(vec!["W".into()]))
            .is_err());
        // Duplicate person in the subset.
        assert!(fit_outcome_model(&ds, &[0, 0], &LearnerSpec::mean_only()).is_err());
        // Negative penalty.
        let neg = LearnerSpec {
            ridge_lambda: -1.0,
            ..LearnerSpec::default()
        };
        assert!(fit_outcome_model(&ds, &[0, 1], &neg).is_err());
    }

    #[test]
    fn spec_json_defaults_match_documented_values() {
        let parsed: LearnerSpec = serde_json::from_str(r#"{"kind": "ridge-spline"}"#).unwrap();
        assert_eq!(parsed, LearnerSpec::default());
        assert_eq!(parsed.spline_df, 4);
        assert_eq!(parsed.ridge_lambda, 1e-6);
        let mean: LearnerSpec = serde_json::from_str(r#"{"kind": "mean-only"}"#).unwrap();
        assert_eq!(mean.kind, LearnerKind::MeanOnly);
    }
}

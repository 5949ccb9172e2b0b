//! Estimand specification: effect-modification features f(t, S_t) and the
//! weights over decision points.
//!
//! The estimand is the weighted least-squares projection of the per-point
//! effect curve onto the span of a small feature vector built from the
//! decision point `t` and declared moderator covariates. The closed term
//! vocabulary below covers constant effects, polynomial and B-spline time
//! trends, moderator main effects, and moderator-by-time interactions.

use serde::{Deserialize, Serialize};

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::spline::BSplineBasis;

fn default_degree() -> u32 {
    1
}
fn default_center() -> f64 {
    1.0
}
fn default_block() -> u32 {
    1
}
fn default_weight() -> WeightSpec {
    WeightSpec::Uniform
}

/// One term of the feature vector f(t, S_t).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TermSpec {
    /// The constant 1.
    Intercept,
    /// `(t - center), (t - center)^2, ..., (t - center)^degree`. With the
    /// default `center = 1`, the intercept coefficient is the effect at the
    /// first decision point.
    TimePoly {
        #[serde(default = "default_degree")]
        degree: u32,
        #[serde(default = "default_center")]
        center: f64,
    },
    /// B-spline columns in the derived time variable
    /// `day(t) = floor((t - 1) / block) + 1`.
    TimeSpline {
        df: usize,
        #[serde(default = "default_block")]
        block: u32,
    },
    /// A declared moderator's value at each decision point.
    Moderator { name: String },
    /// Moderator times centered time.
    ModeratorTime {
        name: String,
        #[serde(default = "default_center")]
        center: f64,
    },
}

/// Weights omega(t) over decision points; they define how the per-point
/// effects are averaged into the projection target.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    /// omega(t) = 1/T.
    Uniform,
    /// All mass on a single decision point.
    PointMass { t0: u32 },
    /// Explicit per-point weights; nonnegative, summing to 1.
    Explicit { values: Vec<f64> },
}

/// What to estimate: moderators, feature terms, and decision-point weights.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimandSpec {
    /// Covariates the effect is allowed to vary with. Every moderator
    /// referenced by a term must be declared here, and each must exist in
    /// the dataset.
    #[serde(default)]
    pub moderators: Vec<String>,
    pub terms: Vec<TermSpec>,
    #[serde(default = "default_weight")]
    pub weight: WeightSpec,
}

impl EstimandSpec {
    /// The fully marginal estimand: a single constant effect, uniform
    /// weights.
    pub fn marginal() -> Self {
        Self {
            moderators: Vec::new(),
            terms: vec![TermSpec::Intercept],
            weight: WeightSpec::Uniform,
        }
    }

    /// Effect moderated by one covariate: f(t, s) = (1, s), uniform weights.
    pub fn moderated_by(name: &str) -> Self {
        Self {
            moderators: vec![name.to_string()],
            terms: vec![
                TermSpec::Intercept,
                TermSpec::Moderator {
                    name: name.to_string(),
                },
            ],
            weight: WeightSpec::Uniform,
        }
    }

    /// Number of feature columns.
    pub fn dim(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                TermSpec::Intercept => 1,
                TermSpec::TimePoly { degree, .. } => *degree as usize,
                TermSpec::TimeSpline { df, .. } => *df,
                TermSpec::Moderator { .. } => 1,
                TermSpec::ModeratorTime { .. } => 1,
            })
            .sum()
    }

    /// Structural checks that do not need a dataset: nonempty terms, sane
    /// degrees, declared moderators unique, terms referencing only declared
    /// moderators.
    pub fn check_shape(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Spec("estimand has no feature terms".into()));
        }
        for (i, m) in self.moderators.iter().enumerate() {
            if self.moderators[..i].contains(m) {
                return Err(Error::Spec(format!("moderator '{m}' declared twice")));
            }
        }
        for term in &self.terms {
            match term {
                TermSpec::TimePoly { degree: 0, .. } => {
                    return Err(Error::Spec("time polynomial of degree 0".into()));
                }
                TermSpec::TimeSpline { df: 0, .. } => {
                    return Err(Error::Spec("time spline with 0 degrees of freedom".into()));
                }
                TermSpec::TimeSpline { block: 0, .. } => {
                    return Err(Error::Spec("time spline block must be at least 1".into()));
                }
                TermSpec::Moderator { name } | TermSpec::ModeratorTime { name, .. }
                    if !self.moderators.contains(name) =>
                {
                    return Err(Error::Spec(format!(
                        "term references moderator '{name}' which is not declared in `moderators`"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Full check against a dataset's covariates.
    pub fn check_against(&self, covariate_names: &[String]) -> Result<()> {
        self.check_shape()?;
        for m in &self.moderators {
            if !covariate_names.iter().any(|n| n == m) {
                return Err(Error::Spec(format!(
                    "moderator '{m}' is not a covariate of the dataset (have: {})",
                    covariate_names.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Build the weight vector omega(1..=T).
pub fn build_weights(weight: &WeightSpec, horizon: u32) -> Result<Vec<f64>> {
    let t_len = horizon as usize;
    if t_len == 0 {
        return Err(Error::Spec("horizon must be at least 1".into()));
    }
    match weight {
        WeightSpec::Uniform => Ok(vec![1.0 / t_len as f64; t_len]),
        WeightSpec::PointMass { t0 } => {
            if *t0 < 1 || *t0 > horizon {
                return Err(Error::Spec(format!(
                    "point-mass weight at t0={t0} outside 1..={horizon}"
                )));
            }
            let mut w = vec![0.0; t_len];
            w[*t0 as usize - 1] = 1.0;
            Ok(w)
        }
        WeightSpec::Explicit { values } => {
            if values.len() != t_len {
                return Err(Error::Spec(format!(
                    "explicit weights have length {}, horizon is {horizon}",
                    values.len()
                )));
            }
            if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Spec("explicit weights must be nonnegative".into()));
            }
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Spec(format!(
                    "explicit weights sum to {sum}, expected 1"
                )));
            }
            Ok(values.clone())
        }
    }
}

enum CompiledTerm {
    Intercept,
    TimePoly { degree: u32, center: f64 },
    TimeSpline { basis: BSplineBasis, block: u32 },
    Moderator { idx: usize },
    ModeratorTime { idx: usize, center: f64 },
}

/// Row-level feature evaluator for a fixed spec and horizon.
///
/// The feature value depends only on `(t, moderator values)`, so the builder
/// can serve datasets and streaming simulations alike. Moderator values are
/// passed in the order the spec declares them.
pub struct FeatureBuilder {
    names: Vec<String>,
    terms: Vec<CompiledTerm>,
    moderators: Vec<String>,
    horizon: u32,
}

fn day_of(t: u32, block: u32) -> f64 {
    ((t - 1) / block + 1) as f64
}

fn fmt_center(center: f64) -> String {
    if center == 0.0 {
        "t".to_string()
    } else {
        format!("t-{center}")
    }
}

impl FeatureBuilder {
    pub fn new(spec: &EstimandSpec, horizon: u32) -> Result<Self> {
        spec.check_shape()?;
        if horizon == 0 {
            return Err(Error::Spec("horizon must be at least 1".into()));
        }
        let mut names = Vec::with_capacity(spec.dim());
        let mut terms = Vec::with_capacity(spec.terms.len());
        for term in &spec.terms {
            match term {
                TermSpec::Intercept => {
                    names.push("intercept".into());
                    terms.push(CompiledTerm::Intercept);
                }
                TermSpec::TimePoly { degree, center } => {
                    for k in 1..=*degree {
                        names.push(if k == 1 {
                            fmt_center(*center)
                        } else {
                            format!("({})^{k}", fmt_center(*center))
                        });
                    }
                    terms.push(CompiledTerm::TimePoly {
                        degree: *degree,
                        center: *center,
                    });
                }
                TermSpec::TimeSpline { df, block } => {
                    let days: Vec<f64> = (1..=horizon).map(|t| day_of(t, *block)).collect();
                    let basis = BSplineBasis::from_data(&days, *df).map_err(|e| match e {
                        Error::Spec(msg) => Error::Spec(format!("time spline: {msg}")),
                        other => other,
                    })?;
                    let var = if *block == 1 {
                        "t".to_string()
                    } else {
                        format!("day{block}")
                    };
                    for k in 1..=*df {
                        names.push(format!("bs({var})[{k}]"));
                    }
                    terms.push(CompiledTerm::TimeSpline {
                        basis,
                        block: *block,
                    });
                }
                TermSpec::Moderator { name } => {
                    let idx = spec.moderators.iter().position(|m| m == name).unwrap();
                    names.push(name.clone());
                    terms.push(CompiledTerm::Moderator { idx });
                }
                TermSpec::ModeratorTime { name, center } => {
                    let idx = spec.moderators.iter().position(|m| m == name).unwrap();
                    names.push(format!("{name}:({})", fmt_center(*center)));
                    terms.push(CompiledTerm::ModeratorTime {
                        idx,
                        center: *center,
                    });
                }
            }
        }
        Ok(Self {
            names,
            terms,
            moderators: spec.moderators.clone(),
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Moderator names in the order `eval_into` expects their values.
    pub fn moderators(&self) -> &[String] {
        &self.moderators
    }

    /// Append f(t, s) to `out`. `s` holds the moderator values in
    /// declaration order.
    pub fn eval_into(&self, t: u32, s: &[f64], out: &mut Vec<f64>) -> Result<()> {
        debug_assert!(t >= 1 && t <= self.horizon);
        debug_assert_eq!(s.len(), self.moderators.len());
        for term in &self.terms {
            match term {
                CompiledTerm::Intercept => out.push(1.0),
                CompiledTerm::TimePoly { degree, center } => {
                    let base = t as f64 - center;
                    let mut v = 1.0;
                    for _ in 0..*degree {
                        v *= base;
                        out.push(v);
                    }
                }
                CompiledTerm::TimeSpline { basis, block } => {
                    basis.eval_into(day_of(t, *block), out);
                }
                CompiledTerm::Moderator { idx } => {
                    let v = s[*idx];
                    if !v.is_finite() {
                        return Err(Error::Data(format!(
                            "moderator '{}' is missing or non-finite at t={t}",
                            self.moderators[*idx]
                        )));
                    }
                    out.push(v);
                }
                CompiledTerm::ModeratorTime { idx, center } => {
                    let v = s[*idx];
                    if !v.is_finite() {
                        return Err(Error::Data(format!(
                            "moderator '{}' is missing or non-finite at t={t}",
                            self.moderators[*idx]
                        )));
                    }
                    out.push(v * (t as f64 - center));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: u32, s: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        self.eval_into(t, s, &mut out)?;
        Ok(out)
    }
}

/// The feature matrix for every row of a dataset, in dataset row order.
#[derive(Debug)]
pub struct FeatureSet {
    names: Vec<String>,
    values: Vec<f64>,
    dim: usize,
    rows: usize,
}

impl FeatureSet {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Evaluate f(t, S_t) at every row of the dataset (including ineligible
/// rows — the estimating equation's centering term runs over all decision
/// points).
pub fn build_features(ds: &MrtDataset, spec: &EstimandSpec) -> Result<FeatureSet> {
    spec.check_against(ds.covariate_names())?;
    let builder = FeatureBuilder::new(spec, ds.horizon())?;
    let mod_idx: Vec<usize> = spec
        .moderators
        .iter()
        .map(|m| ds.covariate_index(m).unwrap())
        .collect();

    let dim = builder.dim();
    let mut values = Vec::with_capacity(ds.n_rows() * dim);
    let mut s = Vec::with_capacity(mod_idx.len());
    for traj in ds.trajectories() {
        for row in &traj.rows {
            s.clear();
            s.extend(mod_idx.iter().map(|&j| row.covariates[j]));
            builder.eval_into(row.t, &s, &mut values).map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("person '{}': {msg}", traj.id)),
                other => other,
            })?;
        }
    }
    Ok(FeatureSet {
        names: builder.names().to_vec(),
        values,
        dim,
        rows: ds.n_rows(),
    })
}

//! Long-format micro-randomized-trial data: types, CSV IO, validation.
//!
//! A dataset holds one trajectory per person. Each trajectory has one row
//! per decision point `t = 1..=T` carrying the eligibility indicator, the
//! treatment actually delivered, the randomization probability used at that
//! point, and covariate values; the end-of-study outcome is a single number
//! per person, stored once on the trajectory.
//!
//! Structural invariants (contiguous decision points, a shared horizon, a
//! constant within-person outcome) are enforced when a dataset is
//! constructed or loaded. Semantic checks that depend on thresholds —
//! positivity of the randomization probabilities, treatment delivered while
//! ineligible, missing covariates — are reported by [`validate`] so callers
//! can surface every offending row at once instead of failing on the first.

use std::collections::HashMap;
use std::io::{Read, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clipping bound for the positivity check: eligible rows must have
/// randomization probability inside `(clip, 1 - clip)`.
pub const DEFAULT_POSITIVITY_CLIP: f64 = 0.005;

/// One decision point within a person's trajectory.
#[derive(Clone, Debug)]
pub struct DecisionRow {
    /// Decision point index, 1-based.
    pub t: u32,
    /// Eligibility (availability) for treatment at `t`.
    pub elig: bool,
    /// Treatment actually delivered at `t`.
    pub treat: bool,
    /// Randomization probability P(A_t = 1 | history) used at `t`.
    /// `NaN` when the row was ineligible and no probability was recorded.
    pub prob: f64,
    /// Covariate values, aligned with [`MrtDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

/// One person's decision-point rows plus their end-of-study outcome.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub id: String,
    /// Rows in decision-point order, `t = 1..=T`.
    pub rows: Vec<DecisionRow>,
    /// The distal outcome, constant within the person.
    pub outcome: f64,
}

/// A complete dataset in long format.
#[derive(Clone, Debug)]
pub struct MrtDataset {
    covariate_names: Vec<String>,
    trajectories: Vec<Trajectory>,
    horizon: u32,
}

fn bits_eq(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

// Reproducibility checks want bitwise float comparison (NaN equal to
// itself), not IEEE semantics, so equality is implemented by hand.
impl PartialEq for DecisionRow {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.elig == other.elig
            && self.treat == other.treat
            && bits_eq(self.prob, other.prob)
            && self.covariates.len() == other.covariates.len()
            && self
                .covariates
                .iter()
                .zip(&other.covariates)
                .all(|(a, b)| bits_eq(*a, *b))
    }
}

impl PartialEq for Trajectory {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && bits_eq(self.outcome, other.outcome) && self.rows == other.rows
    }
}

impl PartialEq for MrtDataset {
    fn eq(&self, other: &Self) -> bool {
        self.covariate_names == other.covariate_names
            && self.horizon == other.horizon
            && self.trajectories == other.trajectories
    }
}

impl MrtDataset {
    /// Assemble a dataset, enforcing the structural invariants: at least one
    /// person, unique ids, decision points exactly `1..=T` in order with the
    /// same `T` for everyone, and covariate vectors aligned with
    /// `covariate_names`.
    pub fn new(covariate_names: Vec<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Data("dataset contains no persons".into()));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for name in &covariate_names {
                if !seen.insert(name) {
                    return Err(Error::Data(format!("duplicate covariate column '{name}'")));
                }
            }
        }
        let horizon = trajectories[0].rows.len() as u32;
        let mut ids = std::collections::HashSet::new();
        for traj in &trajectories {
            if !ids.insert(traj.id.as_str()) {
                return Err(Error::Data(format!("duplicate person id '{}'", traj.id)));
            }
            if traj.rows.len() as u32 != horizon {
                return Err(Error::Data(format!(
                    "inconsistent horizon: person '{}' has {} decision points, \
                     person '{}' has {horizon}",
                    traj.id,
                    traj.rows.len(),
                    trajectories[0].id,
                )));
            }
            for (i, row) in traj.rows.iter().enumerate() {
                if row.t != i as u32 + 1 {
                    return Err(Error::Data(format!(
                        "person '{}': expected decision point {} at position {}, found {}",
                        traj.id,
                        i + 1,
                        i + 1,
                        row.t
                    )));
                }
                if row.covariates.len() != covariate_names.len() {
                    return Err(Error::Data(format!(
                        "person '{}', t={}: {} covariate values for {} covariate columns",
                        traj.id,
                        row.t,
                        row.covariates.len(),
                        covariate_names.len()
                    )));
                }
            }
        }
        Ok(Self {
            covariate_names,
            trajectories,
            horizon,
        })
    }

    /// Number of persons.
    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// Number of decision points per person (`T`).
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Total number of rows (`n * T`).
    pub fn n_rows(&self) -> usize {
        self.trajectories.len() * self.horizon as usize
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Flat row index of `(person, t)`, matching the row order of feature
    /// matrices and per-row work vectors built from this dataset.
    pub fn row_index(&self, person: usize, t: u32) -> usize {
        person * self.horizon as usize + (t as usize - 1)
    }
}

// ---------------------------------------------------------------------------
// CSV input and output
// ---------------------------------------------------------------------------

/// Column-name mapping for long-format CSV files. Any column not named here
/// is read as a covariate, in header order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub id: String,
    pub t: String,
    pub elig: String,
    pub treat: String,
    pub prob: String,
    pub outcome: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            t: "t".into(),
            elig: "elig".into(),
            treat: "treat".into(),
            prob: "prob".into(),
            outcome: "Y".into(),
        }
    }
}

fn is_na(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Csv {
        line,
        message: format!("cannot parse {what} value '{field}' as a number"),
    })
}

fn parse_flag(field: &str, what: &str, line: u64) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Csv {
            line,
            message: format!("{what} must be 0 or 1, found '{other}'"),
        }),
    }
}

/// Read a long-format CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MrtDataset> {
    let file = std::fs::File::open(path)?;
    load_csv_from(file, schema)
}

/// Read long-format CSV from any reader (see [`load_csv`]).
pub fn load_csv_from<R: Read>(reader: R, schema: &CsvSchema) -> Result<MrtDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();

    let col_of = |name: &str, role: &str| -> Result<usize> {
        let matches: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| (h == name).then_some(i))
            .collect();
        match matches.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::Spec(format!(
                "CSV is missing the {role} column '{name}'"
            ))),
            _ => Err(Error::Spec(format!(
                "CSV has more than one '{name}' column"
            ))),
        }
    };
    let id_col = col_of(&schema.id, "person-id")?;
    let t_col = col_of(&schema.t, "decision-point")?;
    let elig_col = col_of(&schema.elig, "eligibility")?;
    let treat_col = col_of(&schema.treat, "treatment")?;
    let prob_col = col_of(&schema.prob, "randomization-probability")?;
    let outcome_col = col_of(&schema.outcome, "outcome")?;

    let reserved = [id_col, t_col, elig_col, treat_col, prob_col, outcome_col];
    let mut covariate_cols = Vec::new();
    let mut covariate_names = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if !reserved.contains(&i) {
            if covariate_names.iter().any(|n: &String| n == name) {
                return Err(Error::Spec(format!(
                    "CSV has more than one '{name}' column"
                )));
            }
            covariate_cols.push(i);
            covariate_names.push(name.to_string());
        }
    }

    struct Partial {
        id: String,
        rows: Vec<(DecisionRow, u64)>,
        outcome: f64,
        outcome_line: u64,
    }
    let mut order: Vec<Partial> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");

        let id = field(id_col).trim().to_string();
        if id.is_empty() {
            return Err(Error::Csv {
                line,
                message: "empty person id".into(),
            });
        }
        let t: u32 = field(t_col).trim().parse().map_err(|_| Error::Csv {
            line,
            message: format!(
                "decision point must be a positive integer, found '{}'",
                field(t_col)
            ),
        })?;
        if t == 0 {
            return Err(Error::Csv {
                line,
                message: "decision points are 1-based; found t=0".into(),
            });
        }
        let elig = parse_flag(field(elig_col), "eligibility", line)?;
        let treat = parse_flag(field(treat_col), "treatment", line)?;
        let prob = if is_na(field(prob_col)) {
            f64::NAN
        } else {
            parse_f64(field(prob_col), "randomization-probability", line)?
        };
        if is_na(field(outcome_col)) {
            return Err(Error::Csv {
                line,
                message: "missing outcome value".into(),
            });
        }
        let outcome = parse_f64(field(outcome_col), "outcome", line)?;
        let covariates = covariate_cols
            .iter()
            .map(|&c| {
                if is_na(field(c)) {
                    Ok(f64::NAN)
                } else {
                    parse_f64(field(c), "covariate", line)
                }
            })
            .collect::<Result<Vec<f64>>>()?;

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Partial {
                id: id.clone(),
                rows: Vec::new(),
                outcome,
                outcome_line: line,
            });
            order.len() - 1
        });
        let partial = &mut order[slot];
        if !bits_eq(partial.outcome, outcome) {
            return Err(Error::Data(format!(
                "outcome varies within person '{id}': {} (line {}) vs {} (line {line})",
                partial.outcome, partial.outcome_line, outcome
            )));
        }
        partial.rows.push((
            DecisionRow {
                t,
                elig,
                treat,
                prob,
                covariates,
            },
            line,
        ));
    }

    if order.is_empty() {
        return Err(Error::Data("CSV contains no data rows".into()));
    }

    let mut trajectories = Vec::with_capacity(order.len());
    for mut partial in order {
        partial.rows.sort_by_key(|(row, _)| row.t);
        for (i, (row, line)) in partial.rows.iter().enumerate() {
            let expected = i as u32 + 1;
            if row.t != expected {
                let message = if i > 0 && partial.rows[i - 1].0.t == row.t {
                    format!(
                        "duplicate decision point t={} for person '{}' (line {line})",
                        row.t, partial.id
                    )
                } else {
                    format!(
                        "decision points for person '{}' are not contiguous: expected t={expected}, found t={}",
                        partial.id, row.t
                    )
                };
                return Err(Error::Data(message));
            }
        }
        trajectories.push(Trajectory {
            id: partial.id,
            rows: partial.rows.into_iter().map(|(row, _)| row).collect(),
            outcome: partial.outcome,
        });
    }

    MrtDataset::new(covariate_names, trajectories)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // `{}` prints the shortest representation that parses back to the
        // same f64, which is what makes write → load an exact round trip.
        format!("{v}")
    }
}

/// Write a dataset as long-format CSV.
pub fn write_csv(ds: &MrtDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, file, schema)
}

/// Write a dataset as long-format CSV to any writer.
pub fn write_csv_to<W: IoWrite>(ds: &MrtDataset, writer: W, schema: &CsvSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.id.clone(),
        schema.t.clone(),
        schema.elig.clone(),
        schema.treat.clone(),
        schema.prob.clone(),
        schema.outcome.clone(),
    ];
    header.extend(ds.covariate_names().iter().cloned());
    wtr.write_record(&header)?;

    let mut record = Vec::with_capacity(header.len());
    for traj in ds.trajectories() {
        for row in &traj.rows {
            record.clear();
            record.push(traj.id.clone());
            record.push(row.t.to_string());
            record.push(if row.elig { "1" } else { "0" }.to_string());
            record.push(if row.treat { "1" } else { "0" }.to_string());
            record.push(fmt_f64(row.prob));
            record.push(fmt_f64(traj.outcome));
            record.extend(row.covariates.iter().map(|&v| fmt_f64(v)));
            wtr.write_record(&record)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Semantic validation
// ---------------------------------------------------------------------------

/// The semantic rules checked by [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationRule {
    /// Treatment recorded at a decision point where the person was
    /// ineligible.
    IneligibleTreated,
    /// Eligible-row randomization probability outside `(clip, 1 - clip)`.
    Positivity,
    /// Eligible row with no recorded randomization probability.
    MissingProb,
    /// Missing or non-finite covariate value.
    MissingCovariate,
    /// Non-finite end-of-study outcome.
    NonfiniteOutcome,
}

/// One offending row (or person, for outcome issues, flagged with `t = 0`).
#[derive(Clone, Debug, Serialize)]
pub struct ValidationIssue {
    pub rule: ValidationRule,
    pub person: String,
    pub t: u32,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub n: usize,
    pub horizon: u32,
    pub rows_checked: usize,
    pub positivity_clip: f64,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    /// A one-line summary naming each violated rule with its count and the
    /// first offending row.
    pub fn summary(&self) -> String {
        if self.ok {
            return format!("ok ({} persons x {} decision points)", self.n, self.horizon);
        }
        let mut parts = Vec::new();
        for rule in [
            ValidationRule::IneligibleTreated,
            ValidationRule::Positivity,
            ValidationRule::MissingProb,
            ValidationRule::MissingCovariate,
            ValidationRule::NonfiniteOutcome,
        ] {
            let hits: Vec<&ValidationIssue> =
                self.issues.iter().filter(|i| i.rule == rule).collect();
            if let Some(first) = hits.first() {
                parts.push(format!(
                    "{:?} x{} (first: person '{}', t={}: {})",
                    rule,
                    hits.len(),
                    first.person,
                    first.t,
                    first.message
                ));
            }
        }
        format!("{} issue(s): {}", self.issues.len(), parts.join("; "))
    }

    /// Convert a failed report into the error the estimators raise.
    pub fn into_error(self) -> Error {
        Error::Validation(self.summary())
    }
}

/// Check the semantic invariants of a dataset: no treatment while
/// ineligible, positivity of eligible-row randomization probabilities under
/// `clip`, no missing probabilities or covariates, finite outcomes.
///
/// Returns the full list of offending rows; `report.ok` is true when there
/// are none.
pub fn validate(ds: &MrtDataset, clip: f64) -> Result<ValidationReport> {
    if !(0.0..0.5).contains(&clip) {
        return Err(Error::Spec(format!(
            "positivity clip must be in [0, 0.5), got {clip}"
        )));
    }
    let mut issues = Vec::new();
    for traj in ds.trajectories() {
        if !traj.outcome.is_finite() {
            issues.push(ValidationIssue {
                rule: ValidationRule::NonfiniteOutcome,
                person: traj.id.clone(),
                t: 0,
                message: format!("outcome is {}", traj.outcome),
            });
        }
        for row in &traj.rows {
            if !row.elig && row.treat {
                issues.push(ValidationIssue {
                    rule: ValidationRule::IneligibleTreated,
                    person: traj.id.clone(),
                    t: row.t,
                    message: "treatment delivered while ineligible".into(),
                });
            }
            if row.elig {
                if row.prob.is_nan() {
                    issues.push(ValidationIssue {
                        rule: ValidationRule::MissingProb,
                        person: traj.id.clone(),
                        t: row.t,
                        message: "eligible row with no randomization probability".into(),
                    });
                } else if !(row.prob > clip && row.prob < 1.0 - clip) {
                    issues.push(ValidationIssue {
                        rule: ValidationRule::Positivity,
                        person: traj.id.clone(),
                        t: row.t,
                        message: format!(
                            "randomization probability {} outside ({clip}, {})",
                            row.prob,
                            1.0 - clip
                        ),
                    });
                }
            }
            for (j, &v) in row.covariates.iter().enumerate() {
                if !v.is_finite() {
                    issues.push(ValidationIssue {
                        rule: ValidationRule::MissingCovariate,
                        person: traj.id.clone(),
                        t: row.t,
                        message: format!(
                            "covariate '{}' is {}",
                            ds.covariate_names()[j],
                            if v.is_nan() { "missing".to_string() } else { v.to_string() }
                        ),
                    });
                }
            }
        }
    }
    Ok(ValidationReport {
        ok: issues.is_empty(),
        n: ds.n(),
        horizon: ds.horizon(),
        rows_checked: ds.n_rows(),
        positivity_clip: clip,
        issues,
    })
}

//! Replicated bias / standard-deviation / coverage studies of the
//! estimators and baselines against the Monte Carlo oracle's truth.
//!
//! A benchmark run is fully specified by its config: every replicate's
//! random streams derive injectively from `(seed, method, n, replicate)`,
//! so the same config reproduces the same report byte for byte, and no two
//! replicates or methods ever share randomness. Replicate failures are
//! excluded and counted rather than silently dropped; a cell with more than
//! 5% failures aborts the run, because summaries over a self-selected
//! subset of replicates would be quietly biased.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comparators::{estimate_gee, estimate_wcls};
use crate::error::{Error, Result};
use crate::estimator::{estimate_dcee, EstimateOptions};
use crate::features::{EstimandSpec, FeatureBuilder};
use crate::nuisance::LearnerSpec;
use crate::parallel::ordered_map;
use crate::rng::{derive_u64, domain, StreamKey};
use crate::simulator::{compute_oracle_beta, simulate_dataset_keyed, OracleResult, ParamsChoice, PolicySpec};

/// Largest tolerated share of failed replicates per (method, n) cell.
const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The excursion-effect estimator without cross-fitting.
    Dcee,
    /// The same estimator with K-fold cross-fitted nuisance models.
    DceeCf,
    /// Pooled working-independence regression baseline.
    Gee,
    /// Weighted-centered least squares baseline.
    Wcls,
}

impl Method {
    /// Stable id mixed into replicate stream keys.
    fn id(self) -> u64 {
        match self {
            Method::Dcee => 0,
            Method::DceeCf => 1,
            Method::Gee => 2,
            Method::Wcls => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Dcee => "dcee",
            Method::DceeCf => "dcee-cf",
            Method::Gee => "gee",
            Method::Wcls => "wcls",
        }
    }
}

/// Where the true coefficients come from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleChoice {
    /// Use precomputed values (e.g. from a previous `oracle` run).
    Supplied { beta_star: Vec<f64> },
    /// Run the Monte Carlo oracle, optionally caching its result in a JSON
    /// file keyed by (parameters, estimand, mc_size) so repeated benchmark
    /// invocations skip the expensive part.
    Computed {
        mc_size: usize,
        seed: u64,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

fn default_crossfit_k() -> usize {
    5
}

fn default_ci_level() -> f64 {
    0.95
}

/// Full description of one benchmark study.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub estimand: EstimandSpec,
    #[serde(default, alias = "learner")]
    pub nuisance: LearnerSpec,
    /// Folds used by the `dcee-cf` method.
    #[serde(default = "default_crossfit_k")]
    pub crossfit_k: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: ParamsChoice,
    pub oracle: OracleChoice,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

impl BenchmarkConfig {
    pub fn check(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Spec("benchmark needs at least one method".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Spec(format!("method '{}' listed twice", m.name())));
            }
        }
        if self.replicates < 2 {
            return Err(Error::Spec(format!(
                "replicates must be at least 2, got {}",
                self.replicates
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Spec("benchmark needs at least one sample size".into()));
        }
        if let Some(bad) = self.sample_sizes.iter().find(|&&n| n < 10) {
            return Err(Error::Spec(format!("sample sizes must be at least 10, got {bad}")));
        }
        if self.crossfit_k < 2 {
            return Err(Error::Spec(format!(
                "crossfit_k must be at least 2, got {}",
                self.crossfit_k
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Spec(format!(
                "ci_level must be in (0, 1), got {}",
                self.ci_level
            )));
        }
        self.estimand.check_shape()?;
        // The pooled-regression baseline only produces coefficients aligned
        // with the projection target when the target is intercept +
        // moderator main effects.
        if self.methods.contains(&Method::Gee) {
            let expect = 1 + self.estimand.moderators.len();
            if self.estimand.dim() != expect {
                return Err(Error::Spec(
                    "the gee baseline only supports estimands whose terms are an intercept \
                     plus moderator main effects"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One summary row: a single coefficient of one method at one sample size.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkCell {
    pub method: Method,
    pub n: usize,
    pub coefficient: String,
    pub beta_star: f64,
    pub bias: f64,
    /// Monte Carlo standard error of `bias`.
    pub mc_se_bias: f64,
    /// Across-replicate standard deviation of the estimates.
    pub sd: f64,
    pub mc_se_sd: f64,
    /// Average of the replicates' model-based standard errors.
    pub mean_se: f64,
    /// Share of replicate confidence intervals covering `beta_star`.
    pub coverage: f64,
    pub mc_se_coverage: f64,
    pub replicates_used: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkReport {
    pub version: String,
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub beta_star: Vec<f64>,
    /// Monte Carlo uncertainty of `beta_star` when the oracle was computed
    /// in this run; absent for supplied values.
    pub oracle_mc_se: Option<Vec<f64>>,
    pub cells: Vec<BenchmarkCell>,
}

/// One successful replicate's effect estimates and interval endpoints.
struct ReplicateFit {
    beta: Vec<f64>,
    se: Vec<f64>,
    ci_lower: Vec<f64>,
    ci_upper: Vec<f64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content key for the oracle cache: the exact inputs that determine the
/// oracle's target (the seed only moves its Monte Carlo noise).
fn oracle_cache_key(params: &ParamsChoice, estimand: &EstimandSpec, mc_size: usize) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(params)?);
    hasher.update(serde_json::to_vec(estimand)?);
    hasher.update(mc_size.to_le_bytes());
    Ok(hex(&hasher.finalize()))
}

#[derive(Default, Serialize, Deserialize)]
struct OracleCache {
    entries: BTreeMap<String, OracleResult>,
}

fn resolve_oracle(cfg: &BenchmarkConfig) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let dim = cfg.estimand.dim();
    match &cfg.oracle {
        OracleChoice::Supplied { beta_star } => {
            if beta_star.len() != dim {
                return Err(Error::Spec(format!(
                    "supplied beta_star has {} entries, estimand has {} coefficients",
                    beta_star.len(),
                    dim
                )));
            }
            Ok((beta_star.clone(), None))
        }
        OracleChoice::Computed { mc_size, seed, cache } => {
            let key = oracle_cache_key(&cfg.params, &cfg.estimand, *mc_size)?;
            let mut store = match cache {
                Some(path) if path.exists() => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str(&text)?
                }
                _ => OracleCache::default(),
            };
            if !store.entries.contains_key(&key) {
                let params = cfg.params.resolve()?;
                let result = compute_oracle_beta(&params, &cfg.estimand, *mc_size, *seed)?;
                store.entries.insert(key.clone(), result);
                if let Some(path) = cache {
                    std::fs::write(path, serde_json::to_string_pretty(&store)?)?;
                }
            }
            let entry = &store.entries[&key];
            Ok((entry.beta_star.clone(), Some(entry.mc_se.clone())))
        }
    }
}

fn fit_replicate(cfg: &BenchmarkConfig, method: Method, n: usize, r: usize) -> Result<ReplicateFit> {
    let params = cfg.params.resolve()?;
    let key = StreamKey::new(cfg.seed, (domain::BENCHMARK << 8) | method.id(), n as u64, r as u64);
    let ds = simulate_dataset_keyed(&params, n, key, PolicySpec::Mrt)?;
    match method {
        Method::Dcee | Method::DceeCf => {
            let opts = EstimateOptions {
                crossfit_k: if method == Method::DceeCf { cfg.crossfit_k } else { 0 },
                seed: derive_u64(key, u64::MAX),
                ci_level: cfg.ci_level,
                ..EstimateOptions::default()
            };
            let fit = estimate_dcee(&ds, &cfg.estimand, &cfg.nuisance, &opts)?;
            Ok(ReplicateFit {
                beta: fit.beta,
                se: fit.se,
                ci_lower: fit.ci_lower,
                ci_upper: fit.ci_upper,
            })
        }
        Method::Gee => {
            let fit = estimate_gee(&ds, &cfg.estimand, cfg.ci_level)?;
            Ok(ReplicateFit {
                beta: fit.beta,
                se: fit.se,
                ci_lower: fit.ci_lower,
                ci_upper: fit.ci_upper,
            })
        }
        Method::Wcls => {
            let fit = estimate_wcls(&ds, &cfg.estimand, None, cfg.ci_level)?;
            Ok(ReplicateFit {
                beta: fit.beta,
                se: fit.se,
                ci_lower: fit.ci_lower,
                ci_upper: fit.ci_upper,
            })
        }
    }
}

/// Collapse one (method, n) cell's replicates into per-coefficient
/// summaries. Failures are excluded and counted; more than
/// [`MAX_FAILURE_SHARE`] of them aborts with the first error message.
fn summarize_cell(
    method: Method,
    n: usize,
    coef_names: &[String],
    beta_star: &[f64],
    outcomes: Vec<std::result::Result<ReplicateFit, String>>,
) -> Result<Vec<BenchmarkCell>> {
    let total = outcomes.len();
    let mut fits = Vec::with_capacity(total);
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(f) => fits.push(f),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let failures = total - fits.len();
    if failures as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(Error::Numerical(format!(
            "{}/{} replicates failed for method {} at n={n} (first: {})",
            failures,
            total,
            method.name(),
            first_error.unwrap_or_default()
        )));
    }
    let m = fits.len();
    if m < 2 {
        return Err(Error::Numerical(format!(
            "only {m} usable replicates for method {} at n={n}",
            method.name()
        )));
    }
    let p = coef_names.len();
    for f in &fits {
        if f.beta.len() != p {
            return Err(Error::Numerical(format!(
                "method {} produced {} coefficients, expected {p}",
                method.name(),
                f.beta.len()
            )));
        }
    }

    let mf = m as f64;
    let mut cells = Vec::with_capacity(p);
    for j in 0..p {
        let mean = fits.iter().map(|f| f.beta[j]).sum::<f64>() / mf;
        let var = fits.iter().map(|f| (f.beta[j] - mean).powi(2)).sum::<f64>() / (mf - 1.0);
        let sd = var.sqrt();
        let mean_se = fits.iter().map(|f| f.se[j]).sum::<f64>() / mf;
        let covered = fits
            .iter()
            .filter(|f| f.ci_lower[j] <= beta_star[j] && beta_star[j] <= f.ci_upper[j])
            .count();
        let coverage = covered as f64 / mf;
        cells.push(BenchmarkCell {
            method,
            n,
            coefficient: coef_names[j].clone(),
            beta_star: beta_star[j],
            bias: mean - beta_star[j],
            mc_se_bias: sd / mf.sqrt(),
            sd,
            mc_se_sd: sd / (2.0 * (mf - 1.0)).sqrt(),
            mean_se,
            coverage,
            mc_se_coverage: (coverage * (1.0 - coverage) / mf).sqrt(),
            replicates_used: m,
            failures,
        });
    }
    Ok(cells)
}

/// Run the full study: for every method and sample size, simulate
/// `replicates` independent trials, fit, and summarize bias, spread, and
/// coverage against the oracle's truth.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.check()?;
    let params = cfg.params.resolve()?;
    let builder = FeatureBuilder::new(&cfg.estimand, params.horizon)?;
    let coef_names = builder.names().to_vec();
    let (beta_star, oracle_mc_se) = resolve_oracle(cfg)?;

    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.sample_sizes {
            let outcomes = ordered_map(cfg.replicates, |r| {
                fit_replicate(cfg, method, n, r).map_err(|e| e.to_string())
            });
            cells.extend(summarize_cell(method, n, &coef_names, &beta_star, outcomes)?);
        }
    }
    Ok(BenchmarkReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        beta_star,
        oracle_mc_se,
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Write a report. JSON is a pretty-printed mirror of the in-memory value;
/// CSV carries the scalar fields as `#`-prefixed header comments above the
/// cell table, so either format round-trips the whole report.
pub fn emit_report<W: Write>(report: &BenchmarkReport, format: ReportFormat, out: &mut W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, report)?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            writeln!(out, "# version: {}", report.version)?;
            writeln!(out, "# seed: {}", report.seed)?;
            writeln!(out, "# config: {}", serde_json::to_string(&report.config)?)?;
            writeln!(out, "# beta_star: {}", serde_json::to_string(&report.beta_star)?)?;
            writeln!(out, "# oracle_mc_se: {}", serde_json::to_string(&report.oracle_mc_se)?)?;
            let mut w = csv::Writer::from_writer(out);
            for cell in &report.cells {
                w.serialize(cell).map_err(Error::from)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parse a report previously written by [`emit_report`] in CSV form.
pub fn parse_report_csv(text: &str) -> Result<BenchmarkReport> {
    let mut version = None;
    let mut seed = None;
    let mut config = None;
    let mut beta_star = None;
    let mut oracle_mc_se = None;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# ") else { break };
        let (key, value) = rest.split_once(": ").ok_or_else(|| {
            Error::Data(format!("malformed report header line: {line}"))
        })?;
        match key {
            "version" => version = Some(value.to_string()),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|e| {
                    Error::Data(format!("bad seed in report header: {e}"))
                })?);
            }
            "config" => config = Some(serde_json::from_str(value)?),
            "beta_star" => beta_star = Some(serde_json::from_str(value)?),
            "oracle_mc_se" => oracle_mc_se = Some(serde_json::from_str(value)?),
            other => return Err(Error::Data(format!("unknown report header key '{other}'"))),
        }
    }
    let missing = |what: &str| Error::Data(format!("report header is missing '{what}'"));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let cells: Vec<BenchmarkCell> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)?;
    Ok(BenchmarkReport {
        version: version.ok_or_else(|| missing("version"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        config: config.ok_or_else(|| missing("config"))?,
        beta_star: beta_star.ok_or_else(|| missing("beta_star"))?,
        oracle_mc_se: oracle_mc_se.ok_or_else(|| missing("oracle_mc_se"))?,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::LearnerSpec;

    fn smoke_config() -> BenchmarkConfig {
        BenchmarkConfig {
            sample_sizes: vec![12],
            replicates: 2,
            methods: vec![Method::Dcee, Method::DceeCf, Method::Gee, Method::Wcls],
            estimand: EstimandSpec::marginal(),
            nuisance: LearnerSpec::mean_only(),
            crossfit_k: 2,
            seed: 17,
            params: ParamsChoice::default(),
            oracle: OracleChoice::Supplied { beta_star: vec![1.603] },
            ci_level: 0.95,
        }
    }

    #[test]
    fn smoke_run_produces_finite_summaries() {
        let report = run_benchmark(&smoke_config()).unwrap();
        assert_eq!(report.seed, 17);
        assert_eq!(report.cells.len(), 4);
        for cell in &report.cells {
            assert_eq!(cell.n, 12);
            assert_eq!(cell.coefficient, "intercept");
            assert_eq!(cell.replicates_used, 2);
            assert_eq!(cell.failures, 0);
            assert!((0.0..=1.0).contains(&cell.coverage));
            for v in [cell.bias, cell.sd, cell.mean_se, cell.mc_se_bias, cell.mc_se_sd] {
                assert!(v.is_finite());
            }
        }
        assert!(report.oracle_mc_se.is_none());
    }

    #[test]
    fn identical_configs_reproduce_the_report_exactly() {
        let a = run_benchmark(&smoke_config()).unwrap();
        let b = run_benchmark(&smoke_config()).unwrap();
        assert_eq!(a, b);
        let mut other = smoke_config();
        other.seed = 18;
        let c = run_benchmark(&other).unwrap();
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn config_mistakes_fail_before_any_work() {
        let mut cfg = smoke_config();
        cfg.methods.clear();
        assert!(run_benchmark(&cfg).is_err());
        cfg = smoke_config();
        cfg.methods = vec![Method::Gee, Method::Gee];
        assert!(run_benchmark(&cfg).is_err());
        cfg = smoke_config();
        cfg.replicates = 1;
        assert!(run_benchmark(&cfg).is_err());
        cfg = smoke_config();
        cfg.sample_sizes = vec![9];
        assert!(run_benchmark(&cfg).is_err());
        cfg = smoke_config();
        cfg.oracle = OracleChoice::Supplied { beta_star: vec![1.0, 2.0] };
        assert!(run_benchmark(&cfg).is_err());
        // Time-structured estimands have no aligned gee coefficients.
        cfg = smoke_config();
        cfg.estimand = EstimandSpec {
            terms: vec![
                crate::features::TermSpec::Intercept,
                crate::features::TermSpec::TimePoly { degree: 1, center: 1.0 },
            ],
            ..EstimandSpec::marginal()
        };
        cfg.oracle = OracleChoice::Supplied { beta_star: vec![1.0, 0.0] };
        assert!(run_benchmark(&cfg).is_err());
        cfg.methods = vec![Method::Dcee];
        assert!(run_benchmark(&cfg).is_ok());
    }

    #[test]
    fn failure_policy_counts_and_aborts() {
        let names = vec!["intercept".to_string()];
        let ok = || ReplicateFit {
            beta: vec![1.0],
            se: vec![0.1],
            ci_lower: vec![0.8],
            ci_upper: vec![1.2],
        };
        // 1 failure in 40 replicates (2.5%) is excluded and counted.
        let mut outcomes: Vec<std::result::Result<ReplicateFit, String>> =
            (0..39).map(|_| Ok(ok())).collect();
        outcomes.push(Err("singular".into()));
        let cells = summarize_cell(Method::Dcee, 30, &names, &[1.0], outcomes).unwrap();
        assert_eq!(cells[0].failures, 1);
        assert_eq!(cells[0].replicates_used, 39);
        // 3 failures in 40 (7.5%) aborts, naming the first error.
        let mut outcomes: Vec<std::result::Result<ReplicateFit, String>> =
            (0..37).map(|_| Ok(ok())).collect();
        outcomes.extend((0..3).map(|_| Err("went sideways".to_string())));
        match summarize_cell(Method::Dcee, 30, &names, &[1.0], outcomes) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("went sideways"), "{msg}"),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn summaries_match_hand_computation() {
        let names = vec!["intercept".to_string()];
        // Estimates 1.0 and 2.0 around a truth of 1.0: mean 1.5, sd
        // sqrt(0.5), one of two intervals covers.
        let outcomes = vec![
            Ok(ReplicateFit {
                beta: vec![1.0],
                se: vec![0.2],
                ci_lower: vec![0.6],
                ci_upper: vec![1.4],
            }),
            Ok(ReplicateFit {
                beta: vec![2.0],
                se: vec![0.4],
                ci_lower: vec![1.2],
                ci_upper: vec![2.8],
            }),
        ];
        let cell = summarize_cell(Method::Gee, 50, &names, &[1.0], outcomes)
            .unwrap()
            .remove(0);
        assert!((cell.bias - 0.5).abs() <= 1e-15);
        assert!((cell.sd - 0.5f64.sqrt()).abs() <= 1e-15);
        assert!((cell.mean_se - 0.3).abs() <= 1e-15);
        assert_eq!(cell.coverage, 0.5);
        assert!((cell.mc_se_bias - 0.5).abs() <= 1e-15);
        assert!((cell.mc_se_coverage - (0.25f64 / 2.0).sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn reports_round_trip_through_both_formats() {
        let report = run_benchmark(&smoke_config()).unwrap();

        let mut json = Vec::new();
        emit_report(&report, ReportFormat::Json, &mut json).unwrap();
        let text = String::from_utf8(json).unwrap();
        assert!(text.contains("\"seed\""));
        assert!(text.contains("\"config\""));
        let back: BenchmarkReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);

        let mut csv_bytes = Vec::new();
        emit_report(&report, ReportFormat::Csv, &mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        let back = parse_report_csv(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn oracle_cache_is_reused_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("oracle.json");
        let mut params = crate::simulator::null_effect_params();
        params.horizon = 2;
        for v in [
            &mut params.alpha,
            &mut params.nu,
            &mut params.gamma,
            &mut params.lambda,
            &mut params.xi,
        ] {
            v.truncate(2);
        }
        let mut cfg = smoke_config();
        cfg.params = ParamsChoice::Custom(params);
        cfg.oracle = OracleChoice::Computed {
            mc_size: 10_000,
            seed: 3,
            cache: Some(cache.clone()),
        };
        let first = run_benchmark(&cfg).unwrap();
        assert!(cache.exists());
        assert!(first.oracle_mc_se.is_some());
        // Second run must hit the cache: poisoning the stored value changes
        // the answer, proving no recomputation happened.
        let text = std::fs::read_to_string(&cache).unwrap();
        let mut store: OracleCache = serde_json::from_str(&text).unwrap();
        let key = store.entries.keys().next().unwrap().clone();
        store.entries.get_mut(&key).unwrap().beta_star = vec![42.0];
        std::fs::write(&cache, serde_json::to_string_pretty(&store).unwrap()).unwrap();
        let second = run_benchmark(&cfg).unwrap();
        assert_eq!(second.beta_star, vec![42.0]);
    }
}

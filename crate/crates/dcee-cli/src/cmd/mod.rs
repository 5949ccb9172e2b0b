//! Config schemas and runners for the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dcee::benchmark::{emit_report, run_benchmark, BenchmarkConfig, ReportFormat};
use dcee::comparators::{estimate_gee, estimate_wcls};
use dcee::data::{load_csv, write_csv_to, CsvSchema, DEFAULT_POSITIVITY_CLIP};
use dcee::estimator::{estimate_dcee, EstimateOptions};
use dcee::features::EstimandSpec;
use dcee::nuisance::LearnerSpec;
use dcee::parallel::configure_threads;
use dcee::simulator::{compute_oracle_betas, simulate_dataset, ParamsChoice, PolicySpec};
use dcee::{Error, Result};

use crate::{Cli, Command, OutputFormat};

/// Common wrapper for JSON outputs: tool version and the fully resolved
/// config next to the result, so an artifact is self-describing and
/// reproducible.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    version: &'static str,
    command: &'static str,
    config: &'a C,
    result: &'a R,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub params: ParamsChoice,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
}

fn default_policy() -> PolicySpec {
    PolicySpec::Mrt
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub params: ParamsChoice,
    pub estimand: EstimandSpec,
    pub mc_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Pair the two excursion arms on shared random streams (lower Monte
    /// Carlo noise, conservatively reported mc_se).
    #[serde(default)]
    pub common_random_numbers: bool,
}

/// One config schema serves `estimate` and `compare`; the comparator-only
/// keys (`method`, `p_tilde`) are simply unused by `estimate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Trial data CSV; may instead come from the `--data` flag.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Column-name remapping for nonstandard CSV headers.
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    pub estimand: EstimandSpec,
    #[serde(default)]
    pub nuisance: LearnerSpec,
    #[serde(default, alias = "crossfit_K")]
    pub crossfit_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub use_t_quantile: bool,
    #[serde(default = "default_clip")]
    pub positivity_clip: f64,
    /// Centering probability for wcls; empirical when absent.
    #[serde(default)]
    pub p_tilde: Option<f64>,
    /// Baseline for `compare`; the `--method` flag takes precedence.
    #[serde(default)]
    pub method: Option<CompareMethod>,
}

fn default_ci_level() -> f64 {
    0.95
}

fn default_clip() -> f64 {
    DEFAULT_POSITIVITY_CLIP
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMethod {
    Gee,
    Wcls,
}

fn load_config<T: DeserializeOwned>(cli: &Cli, command: &str) -> Result<T> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Spec(format!("{command} requires --config <json>")))?;
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn require_json(format: Option<OutputFormat>, command: &str) -> Result<()> {
    if format == Some(OutputFormat::Csv) {
        return Err(Error::Spec(format!("{command} writes JSON; --format csv is not supported")));
    }
    Ok(())
}

fn write_envelope<C: Serialize, R: Serialize>(
    cli: &Cli,
    command: &'static str,
    config: &C,
    result: &R,
) -> Result<()> {
    let envelope = Envelope {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        result,
    };
    let mut out = open_out(&cli.out)?;
    serde_json::to_writer_pretty(&mut out, &envelope)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load_dataset(cfg: &AnalysisConfig) -> Result<dcee::data::MrtDataset> {
    let path = cfg.data.as_ref().ok_or_else(|| {
        Error::Spec("no trial data given; set `data` in the config or pass --data".into())
    })?;
    let schema = cfg.schema.clone().unwrap_or_default();
    load_csv(path, &schema)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        configure_threads(threads)?;
    }
    match &cli.command {
        Command::Simulate => {
            let mut cfg: SimulateConfig = load_config(&cli, "simulate")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if cli.format == Some(OutputFormat::Json) {
                return Err(Error::Spec(
                    "simulate writes the trial as CSV; --format json is not supported".into(),
                ));
            }
            let params = cfg.params.resolve()?;
            let ds = simulate_dataset(&params, cfg.n, cfg.seed, cfg.policy)?;
            let mut out = open_out(&cli.out)?;
            write_csv_to(&ds, &mut out, &CsvSchema::default())?;
            out.flush()?;
            Ok(())
        }
        Command::Oracle => {
            let mut cfg: OracleConfig = load_config(&cli, "oracle")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            require_json(cli.format, "oracle")?;
            let params = cfg.params.resolve()?;
            let result = compute_oracle_betas(
                &params,
                std::slice::from_ref(&cfg.estimand),
                cfg.mc_size,
                cfg.seed,
                cfg.common_random_numbers,
            )?
            .pop()
            .expect("one result per estimand");
            write_envelope(&cli, "oracle", &cfg, &result)
        }
        Command::Estimate { data } => {
            let mut cfg: AnalysisConfig = load_config(&cli, "estimate")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(path) = data {
                cfg.data = Some(path.clone());
            }
            require_json(cli.format, "estimate")?;
            let ds = load_dataset(&cfg)?;
            let opts = EstimateOptions {
                crossfit_k: cfg.crossfit_k,
                seed: cfg.seed,
                ci_level: cfg.ci_level,
                use_t_quantile: cfg.use_t_quantile,
                positivity_clip: cfg.positivity_clip,
            };
            let fit = estimate_dcee(&ds, &cfg.estimand, &cfg.nuisance, &opts)?;
            write_envelope(&cli, "estimate", &cfg, &fit)
        }
        Command::Compare { method, data } => {
            let mut cfg: AnalysisConfig = load_config(&cli, "compare")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(path) = data {
                cfg.data = Some(path.clone());
            }
            if let Some(m) = method {
                cfg.method = Some(*m);
            }
            require_json(cli.format, "compare")?;
            let method = cfg.method.ok_or_else(|| {
                Error::Spec("compare needs a baseline; pass --method gee|wcls".into())
            })?;
            let ds = load_dataset(&cfg)?;
            let fit = match method {
                CompareMethod::Gee => {
                    if cfg.p_tilde.is_some() {
                        return Err(Error::Spec("p_tilde only applies to wcls".into()));
                    }
                    estimate_gee(&ds, &cfg.estimand, cfg.ci_level)?
                }
                CompareMethod::Wcls => estimate_wcls(&ds, &cfg.estimand, cfg.p_tilde, cfg.ci_level)?,
            };
            write_envelope(&cli, "compare", &cfg, &fit)
        }
        Command::Benchmark => {
            let mut cfg: BenchmarkConfig = load_config(&cli, "benchmark")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let format = match cli.format {
                Some(OutputFormat::Csv) => ReportFormat::Csv,
                _ => ReportFormat::Json,
            };
            let report = run_benchmark(&cfg)?;
            let mut out = open_out(&cli.out)?;
            emit_report(&report, format, &mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}

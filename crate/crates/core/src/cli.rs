//! Command-line front end: `estimate`, `simulate` and `enumerate`.
//!
//! Settings come from an optional flat TOML file (`--config`) and from
//! flags; a flag always wins over the file. Exit codes: 0 success, 1 I/O,
//! parse or data errors, 2 invalid configuration.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimators::{evaluate, BaseLearner, Estimator};
use crate::experiment::{load_csv, load_population_csv, DEFAULT_ENUMERATION_CAP};
use crate::inference::{report_for, EstimateReport};
use crate::simulation::{
    exact_randomization_distribution, run_monte_carlo, ExactDistribution, MonteCarloConfig, MonteCarloRow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "calob",
    version,
    about = "Calibrated Oaxaca-Blinder treatment effect estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Debug, Subcommand)]
enum CommandArgs {
    /// Estimate the average treatment effect from a `z,y,x1..xk` CSV.
    Estimate(Flags),
    /// Monte Carlo variance ratios on the simulated binary-outcome design.
    Simulate(Flags),
    /// Exact randomization distribution for a `y0,y1,x1..xk` CSV.
    Enumerate(Flags),
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// Flat TOML file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; written atomically. Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Base learner family: ols, logistic or poisson.
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated subset of unadj,gob,gbcal,cal,cal2,lin.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated populations.
    #[arg(long = "S")]
    populations: Option<usize>,
    /// Allocations drawn per population.
    #[arg(long = "B")]
    allocations: Option<usize>,
    /// Comma-separated population sizes.
    #[arg(long = "N")]
    sizes: Option<String>,
    #[arg(long = "n1-frac")]
    n1_fraction: Option<f64>,
    /// Treated count for `enumerate`.
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// Extra calibration features for cal2: identity or none.
    #[arg(long = "extra-features")]
    extra_features: Option<String>,
    /// Maximum number of allocations `enumerate` will visit.
    #[arg(long)]
    cap: Option<usize>,
    /// Worker threads for simulation (0 = all cores). Never changes results.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListValue<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: ToString> ListValue<T> {
    fn joined(&self) -> String {
        match self {
            ListValue::One(v) => v.to_string(),
            ListValue::Many(v) => v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    family: Option<String>,
    estimators: Option<ListValue<String>>,
    seed: Option<u64>,
    #[serde(rename = "S")]
    populations: Option<usize>,
    #[serde(rename = "B")]
    allocations: Option<usize>,
    #[serde(rename = "N")]
    sizes: Option<ListValue<usize>>,
    #[serde(rename = "n1-frac", alias = "n1_frac")]
    n1_fraction: Option<f64>,
    n1: Option<usize>,
    level: Option<f64>,
    #[serde(rename = "extra-features", alias = "extra_features")]
    extra_features: Option<String>,
    cap: Option<usize>,
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Estimate,
    Simulate,
    Enumerate,
}

/// Extra calibration features used by `cal2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtraFeatures {
    None,
    Identity,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    pub family: BaseLearner,
    pub estimators: Vec<Estimator>,
    pub extra_features: ExtraFeatures,
    pub level: f64,
    pub seed: u64,
    #[serde(rename = "S")]
    pub populations: usize,
    #[serde(rename = "B")]
    pub allocations: usize,
    #[serde(rename = "N")]
    pub sizes: Vec<usize>,
    pub n1_fraction: f64,
    pub n1: Option<usize>,
    pub cap: usize,
    /// Not serialized: output must not depend on parallelism.
    #[serde(skip)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

/// `estimate` output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub meta: Meta,
    pub results: Vec<EstimateReport>,
}

/// `simulate` output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDocument {
    pub meta: Meta,
    pub rows: Vec<MonteCarloRow>,
}

/// `enumerate` output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationDocument {
    pub meta: Meta,
    pub distribution: ExactDistribution,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::config(format!("invalid {what} `{s}`"))))
        .collect()
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

fn resolve(command: Command, flags: Flags) -> Result<RunConfig, CliError> {
    let file = match &flags.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };

    let family = match flags.family.or(file.family) {
        Some(f) => f.parse::<BaseLearner>().map_err(|e| CliError::config(e.to_string()))?,
        None if command == Command::Simulate => BaseLearner::Logistic,
        None => BaseLearner::Ols,
    };
    let estimators = match flags.estimators.or(file.estimators.map(|e| e.joined())) {
        Some(raw) => parse_list::<Estimator>(&raw, "estimator")?,
        None => match command {
            Command::Estimate => Estimator::ALL.to_vec(),
            Command::Simulate => vec![Estimator::Gob, Estimator::Gbcal, Estimator::Cal],
            Command::Enumerate => vec![
                Estimator::Unadj,
                Estimator::Gob,
                Estimator::Gbcal,
                Estimator::Cal,
                Estimator::Lin,
            ],
        },
    };
    if estimators.is_empty() {
        return Err(CliError::config("at least one estimator is required"));
    }
    let extra_features = match flags.extra_features.or(file.extra_features).as_deref() {
        None | Some("identity") => ExtraFeatures::Identity,
        Some("none") => ExtraFeatures::None,
        Some(other) => return Err(CliError::config(format!("unknown extra features `{other}`"))),
    };
    if extra_features == ExtraFeatures::None && estimators.contains(&Estimator::Cal2) {
        return Err(CliError::config(
            "cal2 needs extra features; use --extra-features identity",
        ));
    }
    let sizes = match flags.sizes.or(file.sizes.map(|s| s.joined())) {
        Some(raw) => parse_list::<usize>(&raw, "population size")?,
        None => vec![1000],
    };
    let level = flags.level.or(file.level).unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::config(format!(
            "level {level} must lie strictly between 0 and 1"
        )));
    }
    let config = RunConfig {
        command,
        input: flags.input.or(file.input),
        output: flags.output.or(file.output),
        family,
        estimators,
        extra_features,
        level,
        seed: flags.seed.or(file.seed).unwrap_or(0),
        populations: flags.populations.or(file.populations).unwrap_or(1000),
        allocations: flags.allocations.or(file.allocations).unwrap_or(1000),
        sizes,
        n1_fraction: flags.n1_fraction.or(file.n1_fraction).unwrap_or(0.3),
        n1: flags.n1.or(file.n1),
        cap: flags.cap.or(file.cap).unwrap_or(DEFAULT_ENUMERATION_CAP),
        workers: flags.workers.or(file.workers).unwrap_or(0),
    };

    match command {
        Command::Estimate | Command::Enumerate if config.input.is_none() => {
            return Err(CliError::config("--input is required"));
        }
        Command::Simulate => {
            monte_carlo_config(&config)
                .validate()
                .map_err(|e| CliError::config(e.to_string()))?;
        }
        _ => {}
    }
    Ok(config)
}

fn monte_carlo_config(config: &RunConfig) -> MonteCarloConfig {
    MonteCarloConfig {
        sizes: config.sizes.clone(),
        n1_fraction: config.n1_fraction,
        populations: config.populations,
        allocations: config.allocations,
        learner: config.family,
        estimators: config.estimators.clone(),
        seed: config.seed,
        workers: config.workers,
    }
}

fn meta(config: &RunConfig) -> Meta {
    Meta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
    }
}

/// Serializes `doc` and writes it to `path` via a temporary file and rename,
/// or to `stdout` when no path is given.
fn emit<T: Serialize>(doc: &T, path: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(doc).map_err(|e| CliError {
        code: EXIT_RUNTIME,
        message: format!("cannot serialize report: {e}"),
    })?;
    json.push('\n');
    let io_err = |p: &Path, e: std::io::Error| {
        CliError::from(Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    match path {
        None => stdout
            .write_all(json.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(p, e))?;
            tmp.write_all(json.as_bytes()).map_err(|e| io_err(p, e))?;
            tmp.as_file().sync_all().map_err(|e| io_err(p, e))?;
            tmp.persist(p).map_err(|e| io_err(p, e.error))?;
            Ok(())
        }
    }
}

/// Runs `estimate` and returns the document without writing it.
pub fn estimate_document(config: &RunConfig, stderr: &mut dyn Write) -> Result<EstimateDocument, CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::config("--input is required"))?;
    let obs = load_csv(input)?;
    // cal2 calibrates on f(x) = x, the covariates themselves (the `None` default).
    let evals = evaluate(&obs, config.family, &config.estimators, None)?;
    let mut results = Vec::with_capacity(evals.len());
    for eval in &evals {
        if !eval.base_converged {
            let _ = writeln!(
                stderr,
                "warning: {} base learner did not converge for estimator {}; estimate reported with diagnostics",
                config.family, eval.estimator
            );
        }
        results.push(report_for(&obs, eval, config.level)?);
    }
    Ok(EstimateDocument {
        meta: meta(config),
        results,
    })
}

pub fn simulation_document(config: &RunConfig) -> Result<SimulationDocument, CliError> {
    let table = run_monte_carlo(&monte_carlo_config(config))?;
    Ok(SimulationDocument {
        meta: meta(config),
        rows: table.rows,
    })
}

pub fn enumeration_document(config: &RunConfig) -> Result<EnumerationDocument, CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::config("--input is required"))?;
    let pop = load_population_csv(input)?;
    let n1 = config.n1.unwrap_or(pop.len() / 2);
    let distribution = exact_randomization_distribution(&pop, n1, config.family, &config.estimators, config.cap)?;
    Ok(EnumerationDocument {
        meta: meta(config),
        distribution,
    })
}

fn execute(config: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let out = config.output.as_deref();
    match config.command {
        Command::Estimate => emit(&estimate_document(config, stderr)?, out, stdout),
        Command::Simulate => {
            let doc = simulation_document(config)?;
            for row in &doc.rows {
                if row.flagged_populations > 0 {
                    let _ = writeln!(
                        stderr,
                        "warning: N={}: {} populations skipped more than 5% of replications",
                        row.n, row.flagged_populations
                    );
                }
            }
            emit(&doc, out, stdout)
        }
        Command::Enumerate => emit(&enumeration_document(config)?, out, stdout),
    }
}

/// Parses `args` (including the program name) into a [`RunConfig`].
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError {
        code: if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK },
        message: e.to_string(),
    })?;
    match cli.command {
        CommandArgs::Estimate(f) => resolve(Command::Estimate, f),
        CommandArgs::Simulate(f) => resolve(Command::Simulate, f),
        CommandArgs::Enumerate(f) => resolve(Command::Enumerate, f),
    }
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_config(args).and_then(|config| execute(&config, stdout, stderr));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.code == EXIT_OK => {
            let _ = write!(stdout, "{}", e.message);
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message.trim_end());
            e.code
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_config(std::iter::once("calob").chain(args.iter().copied()))
    }

    #[test]
    fn defaults_per_command() {
        let sim = cfg(&["simulate"]).unwrap();
        assert_eq!(sim.family, BaseLearner::Logistic);
        assert_eq!(sim.estimators, vec![Estimator::Gob, Estimator::Gbcal, Estimator::Cal]);
        assert_eq!(sim.level, 0.95);
        let est = cfg(&["estimate", "--input", "x.csv"]).unwrap();
        assert_eq!(est.family, BaseLearner::Ols);
        assert_eq!(est.extra_features, ExtraFeatures::Identity);
    }

    #[test]
    fn invalid_configs_exit_two() {
        for args in [
            vec!["simulate", "--B", "1"],
            vec!["simulate", "--S", "0"],
            vec!["simulate", "--N", "2"],
            vec!["estimate"],
            vec!["estimate", "--input", "a.csv", "--level", "1.0"],
            vec!["estimate", "--input", "a.csv", "--family", "probit"],
            vec!["estimate", "--input", "a.csv", "--estimators", "cal,bogus"],
            vec![
                "estimate",
                "--input",
                "a.csv",
                "--estimators",
                "cal2",
                "--extra-features",
                "none",
            ],
            vec!["frobnicate"],
        ] {
            let err = cfg(&args).unwrap_err();
            assert_eq!(err.code, EXIT_CONFIG, "{args:?}: {}", err.message);
        }
    }

    #[test]
    fn flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "S = 7\nB = 9\nN = [100, 200]\nseed = 3\nfamily = \"poisson\"\nestimators = [\"cal\", \"gob\"]\nn1_frac = 0.4").unwrap();
        let path = f.path().to_str().unwrap();
        let c = cfg(&["simulate", "--config", path, "--B", "11"]).unwrap();
        assert_eq!((c.populations, c.allocations, c.seed), (7, 11, 3));
        assert_eq!(c.sizes, vec![100, 200]);
        assert_eq!(c.family, BaseLearner::Poisson);
        assert_eq!(c.estimators, vec![Estimator::Cal, Estimator::Gob]);
        assert_eq!(c.n1_fraction, 0.4);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bogus = 1").unwrap();
        let err = cfg(&["simulate", "--config", f.path().to_str().unwrap()]).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    #[test]
    fn help_exits_zero() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run_with(["calob", "--help"], &mut out, &mut err), EXIT_OK);
        assert!(String::from_utf8(out).unwrap().contains("simulate"));
    }
}

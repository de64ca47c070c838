//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors (reported
//! before any simulation starts), 1 for runtime failures. Progress goes to
//! standard error; standard output carries only the machine-readable summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::copula::{bound_curve_rows, write_bound_rows_csv, BoundCurveRow, CopulaKind};
use crate::error::Error;
use crate::experiments::{
    run_beta_experiment, run_bound, run_check, run_regression_experiment, BetaExperimentConfig, CheckConfig,
    RegressionExperimentConfig, RunMeta,
};
use crate::seed::SeedSpec;

pub const THREADS_ENV: &str = "JOINTCHECK_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "jointcheck", version, about = "Joint posterior predictive checks and frequency bounds")]
pub struct Cli {
    /// Worker threads; 0 uses every available core. Never changes output bytes.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Format of the summary written to standard output.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Only report warnings and errors on standard error.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration file; unknown fields are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for report and table files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Computes the configured p-values for a model and dataset.
    Check(RunArgs),
    /// Joint p-value with its estimated null distribution and frequency bound.
    Bound(RunArgs),
    /// Frequency bounds of `p^d` under independence or Gaussian copulas.
    CopulaCurves(CopulaArgs),
    /// Runs a simulation study.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentKind,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Beta,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Independence,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct CopulaArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Dimensions: an inclusive range `a..b` or a comma list.
    #[arg(long, value_parser = parse_dims)]
    pub d: Option<Dims>,
    /// Marginal p-values, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Negative-dependence levels for the Gaussian copula, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub v: Option<Vec<f64>>,
    /// Copula draws per (v, d) for the empirical Kendall function.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Pool size for Monte Carlo copula CDF values.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad dimension {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        return Ok(Dims((a..=b).collect()));
    }
    Ok(Dims(s.split(',').map(parse).collect::<std::result::Result<_, _>>()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopulaCurvesConfig {
    pub kind: CopulaKind,
    pub d: Vec<usize>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub n_samples: usize,
    pub n_mc_cdf: usize,
    pub grid_step: f64,
    pub seed: u64,
}

impl Default for CopulaCurvesConfig {
    fn default() -> Self {
        CopulaCurvesConfig {
            kind: CopulaKind::Independence,
            d: (2..=10).collect(),
            p: vec![0.05, 0.1, 0.2, 0.4],
            v: vec![0.1, 0.3, 0.5],
            n_samples: 200_000,
            n_mc_cdf: 200_000,
            grid_step: 1e-4,
            seed: 1,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = if matches!(e, CliError::Config(_)) { "configuration error" } else { "error" };
            eprintln!("jointcheck: {kind}: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command on a pool of `--threads` workers.
pub fn run(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(Error::InvalidParameter(format!("thread pool: {e}"))))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match &cli.command {
        Command::Check(args) => {
            let config = load_check(args)?;
            let out = run_check(&config)?;
            if let Some(dir) = &args.out {
                out.write_dir(dir)?;
            }
            match cli.format {
                Format::Json => print_json(&mut stdout, &out.report)?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut stdout);
                    w.write_record(["method", "statistic", "value", "std_error"])?;
                    let r = &out.report.result;
                    for s in &r.statistics {
                        let mut rows = vec![("post_p", &s.post_p), ("sampled_p", &s.sampled_p)];
                        rows.extend(s.cal_p.as_ref().map(|e| ("cal_p", e)));
                        rows.extend(s.part_p.as_ref().map(|e| ("part_p", e)));
                        for (m, e) in rows {
                            w.write_record([m, &s.name, &e.value.to_string(), &e.std_error.to_string()])?;
                        }
                    }
                    for (m, e) in [("joint_p", &r.joint_p), ("sampled_joint_p", &r.sampled_joint_p)] {
                        w.write_record([m, "", &e.value.to_string(), &e.std_error.to_string()])?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::Bound(args) => {
            let config = load_check(args)?;
            let out = run_bound(&config)?;
            if let Some(dir) = &args.out {
                out.write_dir(dir)?;
            }
            match cli.format {
                Format::Json => print_json(&mut stdout, &out.report)?,
                Format::Csv => {
                    let r = &out.report;
                    writeln!(stdout, "joint_p,bound,s_star")?;
                    writeln!(stdout, "{},{},{}", r.joint_p.value, r.bound, r.s_star)?;
                }
            }
        }
        Command::CopulaCurves(args) => {
            let config = copula_config(args)?;
            let meta = RunMeta::for_config(&config)?;
            let rows = bound_curve_rows(
                config.kind,
                &config.d,
                &config.p,
                &config.v,
                config.n_samples,
                config.n_mc_cdf,
                config.grid_step,
                SeedSpec::new(config.seed),
            )
            .map_err(config_or_runtime)?;
            if let Some(dir) = &args.run.out {
                std::fs::create_dir_all(dir)?;
                let f = std::fs::File::create(dir.join("bound_curves.csv"))?;
                write_bound_rows_csv(&rows, std::io::BufWriter::new(f), Some(&meta.preamble()))?;
            }
            match cli.format {
                Format::Json => {
                    #[derive(Serialize)]
                    struct Curves<'a> {
                        meta: RunMeta,
                        config: &'a CopulaCurvesConfig,
                        rows: &'a [BoundCurveRow],
                    }
                    print_json(&mut stdout, &Curves { meta, config: &config, rows: &rows })?
                }
                Format::Csv => write_bound_rows_csv(&rows, &mut stdout, Some(&meta.preamble()))?,
            }
        }
        Command::Experiment { which: ExperimentKind::Beta, run } => {
            let mut config: BetaExperimentConfig = read_config(run.config.as_deref())?;
            if let Some(s) = run.seed {
                config.seed = s;
            }
            config.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let out = run_beta_experiment(&config)?;
            if let Some(dir) = &run.out {
                out.write_dir(dir)?;
            }
            match cli.format {
                Format::Json => print_json(&mut stdout, &out.report.summary)?,
                Format::Csv => {
                    let s = &out.report.summary;
                    writeln!(stdout, "statistic,median_post_p,median_sampled_p,median_cal_p,median_part_p")?;
                    for (j, name) in out.statistic_names.iter().enumerate() {
                        let cell = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[j].to_string()).unwrap_or_default();
                        writeln!(
                            stdout,
                            "{name},{},{},{},{}",
                            s.median_post_p[j],
                            s.median_sampled_p[j],
                            cell(&s.median_cal_p),
                            cell(&s.median_part_p)
                        )?;
                    }
                }
            }
        }
        Command::Experiment { which: ExperimentKind::Regression, run } => {
            let mut config: RegressionExperimentConfig = read_config(run.config.as_deref())?;
            if let Some(s) = run.seed {
                config.seed = s;
            }
            config.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let out = run_regression_experiment(&config)?;
            if let Some(dir) = &run.out {
                out.write_dir(dir)?;
            }
            match cli.format {
                Format::Json => print_json(&mut stdout, &out.report.summary)?,
                Format::Csv => {
                    writeln!(stdout, "rho,post_p,sampled_p,joint_p,joint_bound,sampled_joint_p")?;
                    for (rho, m) in out.report.raw_medians() {
                        let cells: Vec<String> = m.iter().map(|v| v.to_string()).collect();
                        writeln!(stdout, "{rho},{}", cells.join(","))?;
                    }
                }
            }
        }
    }
    stdout.flush()?;
    Ok(())
}

fn config_or_runtime(e: Error) -> CliError {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => CliError::Config(e.to_string()),
        other => CliError::Runtime(other),
    }
}

fn print_json<T: Serialize>(w: &mut impl Write, value: &T) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(Error::from)?;
    writeln!(w)?;
    Ok(())
}

/// Reads a JSON config, or the defaults when no path is given. Syntax and
/// schema errors are reported as `path:line:column: message`.
fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => read_required(p),
    }
}

fn read_required<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: cannot read: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("{}:{}:{}: {}", path.display(), e.line(), e.column(), strip_position(&e)))
    })
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

fn load_check(args: &RunArgs) -> CliResult<CheckConfig> {
    let Some(path) = &args.config else {
        return Err(CliError::Config("--config is required".into()));
    };
    let mut config: CheckConfig = read_required(path)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn copula_config(args: &CopulaArgs) -> CliResult<CopulaCurvesConfig> {
    let mut c: CopulaCurvesConfig = read_config(args.run.config.as_deref())?;
    if let Some(k) = args.kind {
        c.kind = match k {
            KindArg::Independence => CopulaKind::Independence,
            KindArg::Gaussian => CopulaKind::GaussianEquicorrelated,
        };
    }
    if let Some(d) = &args.d {
        c.d = d.0.clone();
    }
    if let Some(p) = &args.p {
        c.p = p.clone();
    }
    if let Some(v) = &args.v {
        c.v = v.clone();
    }
    if let Some(n) = args.samples {
        c.n_samples = n;
    }
    if let Some(n) = args.pool {
        c.n_mc_cdf = n;
    }
    if let Some(g) = args.grid_step {
        c.grid_step = g;
    }
    if let Some(s) = args.run.seed {
        c.seed = s;
    }
    if c.d.is_empty() || c.p.is_empty() || c.d.iter().any(|&d| d < 2) {
        return Err(CliError::Config("need at least one dimension >= 2 and one p".into()));
    }
    if c.p.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(CliError::Config("p values must lie in (0, 1)".into()));
    }
    if c.kind == CopulaKind::GaussianEquicorrelated && (c.v.is_empty() || c.v.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(CliError::Config("v values must lie in [0, 1]".into()));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse_ranges_and_lists() {
        assert_eq!(parse_dims("2..10").unwrap().0, (2..=10).collect::<Vec<_>>());
        assert_eq!(parse_dims("2,3,5").unwrap().0, vec![2, 3, 5]);
        assert!(parse_dims("5..2").is_err());
        assert!(parse_dims("x").is_err());
    }

    #[test]
    fn config_errors_carry_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{\n  \"replicates\": 2,\n  \"bogus\": 1\n}\n").unwrap();
        let e = read_config::<BetaExperimentConfig>(Some(&p)).unwrap_err();
        let msg = e.to_string();
        assert_eq!(e.exit_code(), 2);
        assert!(msg.contains("c.json:3:"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(parse_and_dispatch(["jointcheck", "no-such-command"]), 2);
        assert_eq!(parse_and_dispatch(["jointcheck", "check"]), 2);
        assert_eq!(parse_and_dispatch(["jointcheck", "-q", "check", "--config", "/nonexistent.json"]), 2);
        assert_eq!(parse_and_dispatch(["jointcheck", "-q", "copula-curves", "--p", "1.5"]), 2);
        assert_eq!(parse_and_dispatch(["jointcheck", "--version"]), 0);
    }

    #[test]
    fn independence_curves_have_one_row_per_pair() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = parse_and_dispatch([
            "jointcheck", "-q", "--format", "csv", "copula-curves", "--kind", "independence", "--d", "2..10", "--p",
            "0.05,0.1,0.2,0.4", "--out", out,
        ]);
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(dir.path().join("bound_curves.csv")).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], "p,d,v,alpha,bound,s_star");
        assert_eq!(data.len(), 1 + 36);
    }
}

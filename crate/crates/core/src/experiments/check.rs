//! Checking a user-supplied model and dataset: every p-value, or the joint
//! p-value with its frequency bound.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::analysis::{analyze, DatasetAnalysis, Methods, MonteCarloSizes, SharedTables};
use super::{csv_writer, fmt_f64, fmt_opt, write_json, RunMeta};
use crate::error::{invalid, Error, Result};
use crate::model::{projection_stat, sample_quantile_stat, Dataset, GenerativeModel, ModelDescriptor, Tail, TestStatistic};
use crate::seed::SeedSpec;

const SEED_DATA: u64 = 0;
const SEED_ANALYSIS: u64 = 1;

/// Where the observed data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// CSV with a `y` column, plus `x1..xd` for regression data. Relative
    /// paths resolve against the configuration file's directory.
    Csv { path: PathBuf },
    /// `n` draws from Beta(a, b), generated from the run seed.
    Beta { a: f64, b: f64, n: usize },
}

/// A test statistic. `tail` defaults to lower for quantiles and upper otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StatDescriptor {
    Quantile {
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail: Option<Tail>,
    },
    /// Projection of the response on design column `column` (1-based).
    Projection {
        column: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail: Option<Tail>,
    },
    Mean {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail: Option<Tail>,
    },
}

impl StatDescriptor {
    pub fn build(&self, data: &Dataset) -> Result<TestStatistic> {
        match *self {
            StatDescriptor::Quantile { q, tail } => {
                let s = sample_quantile_stat(q)?;
                let t = tail.unwrap_or(s.tail);
                Ok(s.with_tail(t))
            }
            StatDescriptor::Projection { column, tail } => {
                let Dataset::Regression { x, .. } = data else {
                    return invalid("projection statistics need regression data");
                };
                if column == 0 || column > x.ncols() {
                    return invalid(format!("projection column {column} outside 1..={}", x.ncols()));
                }
                Ok(projection_stat(x.column(column - 1).iter().copied().collect())?
                    .with_tail(tail.unwrap_or(Tail::Upper))
                    .with_name(format!("x{column}_projection")))
            }
            StatDescriptor::Mean { tail } => Ok(TestStatistic::mean(tail.unwrap_or(Tail::Upper))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub model: ModelDescriptor,
    pub data: DataSource,
    pub statistics: Vec<StatDescriptor>,
    #[serde(default)]
    pub monte_carlo: MonteCarloSizes,
    #[serde(default)]
    pub methods: Methods,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl CheckConfig {
    /// Rewrites a relative CSV path so it resolves against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Csv { path } = &mut self.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Loads the data and builds the model and statistics without simulating.
    pub fn validate(&self) -> Result<()> {
        let (model, stats, _) = self.load()?;
        if self.methods.partial && model.parameter_grid(2).is_none() {
            return invalid("methods.partial needs a model with a scalar parameter; disable it for this family");
        }
        self.monte_carlo.validate(stats.len(), &self.methods)
    }

    fn load(&self) -> Result<(Box<dyn GenerativeModel>, Vec<TestStatistic>, Dataset)> {
        if self.statistics.is_empty() {
            return invalid("at least one statistic is required");
        }
        let seed = SeedSpec::new(self.seed);
        let data = match &self.data {
            DataSource::Csv { path } => Dataset::read_csv(
                File::open(path).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?,
            )?,
            DataSource::Beta { a, b, n } => {
                let dist = Beta::new(*a, *b).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let mut rng = seed.child(SEED_DATA).rng();
                Dataset::scalar(
                    (0..*n).map(|_| dist.sample(&mut rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)).collect(),
                )?
            }
        };
        let model = self.model.build(Some(&data))?;
        // replicated data must have the observed shape
        let probe = model.sample_data(&model.sample_prior(&mut seed.child(SEED_DATA).child(1).rng()), &mut seed.rng())?;
        if probe.len() != data.len() {
            return Err(Error::DimensionMismatch { expected: probe.len(), actual: data.len() });
        }
        let stats: Vec<TestStatistic> = self.statistics.iter().map(|s| s.build(&data)).collect::<Result<_>>()?;
        let mut names: Vec<&str> = stats.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return invalid("statistics must be distinct");
        }
        Ok((model, stats, data))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub meta: RunMeta,
    pub command: &'static str,
    pub config: CheckConfig,
    pub result: DatasetAnalysis,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub report: CheckReport,
    pub tables: SharedTables,
    pub statistic_names: Vec<String>,
}

/// All six p-value kinds (those enabled in `methods`) for one dataset.
pub fn run_check(config: &CheckConfig) -> Result<CheckOutcome> {
    let meta = RunMeta::for_config(config)?;
    let (model, stats, data) = config.load()?;
    let seed = SeedSpec::new(config.seed).child(SEED_ANALYSIS);
    let (tables, mut results) = analyze(model.as_ref(), &stats, &[data], &config.monte_carlo, &config.methods, seed)?;
    Ok(CheckOutcome {
        report: CheckReport { meta, command: "check", config: config.clone(), result: results.remove(0) },
        tables,
        statistic_names: stats.iter().map(|s| s.name.clone()).collect(),
    })
}

impl CheckOutcome {
    /// Writes report.json and pvalues.csv, plus fhat.csv, bound_curve.csv,
    /// calibration.csv and partial_posterior.csv for the enabled methods.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = &self.report.meta;
        let r = &self.report.result;
        write_json(&dir.join("report.json"), &self.report)?;

        let mut w = csv_writer(&dir.join("pvalues.csv"), meta)?;
        w.write_record(["method", "statistic", "value", "std_error", "bound"])?;
        for s in &r.statistics {
            let mut rows = vec![("post_p", &s.post_p, Some(s.meng_bound)), ("sampled_p", &s.sampled_p, None)];
            rows.extend(s.cal_p.as_ref().map(|e| ("cal_p", e, None)));
            rows.extend(s.part_p.as_ref().map(|e| ("part_p", e, None)));
            for (method, e, bound) in rows {
                w.write_record([method, &s.name, &fmt_f64(e.value), &fmt_f64(e.std_error), &fmt_opt(bound)])?;
            }
        }
        for (method, e, bound) in [("joint_p", &r.joint_p, r.joint_bound), ("sampled_joint_p", &r.sampled_joint_p, None)] {
            w.write_record([method, "", &fmt_f64(e.value), &fmt_f64(e.std_error), &fmt_opt(bound)])?;
        }
        w.flush()?;

        if let Some(f) = &self.tables.fhat {
            write_fhat(dir, meta, f)?;
        }
        if let Some(b) = &r.bound_curve {
            write_curve(dir, meta, b)?;
        }
        if !self.tables.calibration.is_empty() {
            let mut w = csv_writer(&dir.join("calibration.csv"), meta)?;
            w.write_record(["statistic", "support", "cumulative_weight"])?;
            for (name, m) in self.statistic_names.iter().zip(&self.tables.calibration) {
                for (s, c) in m.ecdf().support().iter().zip(m.ecdf().cumulative()) {
                    w.write_record([name.clone(), fmt_f64(*s), fmt_f64(*c)])?;
                }
            }
            w.flush()?;
        }
        if !r.partial_posteriors.is_empty() {
            let mut w = csv_writer(&dir.join("partial_posterior.csv"), meta)?;
            w.write_record(["statistic", "theta", "weight"])?;
            for (name, p) in self.statistic_names.iter().zip(&r.partial_posteriors) {
                for (t, wt) in p.grid.iter().zip(&p.weights) {
                    w.write_record([name.clone(), fmt_f64(t.0[0]), fmt_f64(*wt)])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn write_fhat(dir: &Path, meta: &RunMeta, f: &crate::ecdf::EmpiricalCdf) -> Result<()> {
    let mut w = csv_writer(&dir.join("fhat.csv"), meta)?;
    w.write_record(["support", "cumulative_weight"])?;
    for (s, c) in f.support().iter().zip(f.cumulative()) {
        w.write_record([fmt_f64(*s), fmt_f64(*c)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_curve(dir: &Path, meta: &RunMeta, b: &crate::frequency_bound::BoundResult) -> Result<()> {
    let mut w = csv_writer(&dir.join("bound_curve.csv"), meta)?;
    w.write_record(["alpha", "s", "objective"])?;
    for (s, o) in &b.objective_curve {
        w.write_record([fmt_f64(b.alpha), fmt_f64(*s), fmt_f64(*o)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub meta: RunMeta,
    pub command: &'static str,
    pub config: CheckConfig,
    pub joint_p: crate::estimators::PValueEstimate,
    pub bound: f64,
    pub s_star: f64,
    /// Per-statistic `(name, post_p, 2·post_p capped at 1)`.
    pub marginal: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct BoundOutcome {
    pub report: BoundReport,
    pub fhat: crate::ecdf::EmpiricalCdf,
    pub curve: crate::frequency_bound::BoundResult,
}

/// Joint posterior predictive p-value, the estimated null distribution of
/// joint p-values, and the resulting frequency bound. Other methods are off.
pub fn run_bound(config: &CheckConfig) -> Result<BoundOutcome> {
    let meta = RunMeta::for_config(config)?;
    let (model, stats, data) = config.load()?;
    let methods = Methods { bound: true, calibrated: false, partial: false };
    let seed = SeedSpec::new(config.seed).child(SEED_ANALYSIS);
    let (tables, mut results) = analyze(model.as_ref(), &stats, &[data], &config.monte_carlo, &methods, seed)?;
    let r = results.remove(0);
    let curve = r.bound_curve.clone().expect("bound enabled");
    let fhat = tables.fhat.expect("bound enabled");
    Ok(BoundOutcome {
        report: BoundReport {
            meta,
            command: "bound",
            config: config.clone(),
            joint_p: r.joint_p,
            bound: curve.bound,
            s_star: curve.s_star,
            marginal: r.statistics.iter().map(|s| (s.name.clone(), s.post_p.value, s.meng_bound)).collect(),
        },
        fhat,
        curve,
    })
}

impl BoundOutcome {
    /// Writes report.json, fhat.csv and bound_curve.csv.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &self.report)?;
        write_fhat(dir, &self.report.meta, &self.fhat)?;
        write_curve(dir, &self.report.meta, &self.curve)
    }
}

//! Symmetric-beta model fitted to skewed beta data, checked with two sample
//! quantiles.

use std::path::Path;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::analysis::{analyze, DatasetAnalysis, Methods, MonteCarloSizes};
use super::{csv_writer, fmt_f64, fmt_opt, write_json, RunMeta};
use crate::calibration::CalibrationMap;
use crate::ecdf::EmpiricalCdf;
use crate::error::{invalid, Result};
use crate::model::{sample_quantile_stat, BetaSymmetricModel, Dataset, TestStatistic};
use crate::seed::SeedSpec;
use crate::stats::median;

const SEED_DATA: u64 = 0;
const SEED_ANALYSIS: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaExperimentConfig {
    pub n_obs: usize,
    /// Shape parameters of the data-generating beta distribution.
    pub true_a: f64,
    pub true_b: f64,
    pub prior_lo: f64,
    pub prior_hi: f64,
    pub grid_size: usize,
    pub quantiles: Vec<f64>,
    /// Number of independent datasets analyzed.
    pub replicates: usize,
    pub monte_carlo: MonteCarloSizes,
    pub methods: Methods,
    pub seed: u64,
}

impl Default for BetaExperimentConfig {
    fn default() -> Self {
        BetaExperimentConfig {
            n_obs: 100,
            true_a: 1.0,
            true_b: 1.5,
            prior_lo: 0.5,
            prior_hi: 4.0,
            grid_size: 2048,
            quantiles: vec![0.05, 0.95],
            replicates: 1,
            monte_carlo: MonteCarloSizes::default(),
            methods: Methods::default(),
            seed: 1,
        }
    }
}

impl BetaExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 || self.replicates == 0 {
            return invalid("n_obs and replicates must be at least 1");
        }
        if !(self.true_a > 0.0 && self.true_b > 0.0) {
            return invalid("true_a and true_b must be positive");
        }
        if self.quantiles.is_empty() || self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return invalid("quantiles must be a nonempty list of values in (0, 1)");
        }
        self.monte_carlo.validate(self.quantiles.len(), &self.methods)
    }
}

/// Medians across datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSummary {
    pub datasets: usize,
    pub median_post_p: Vec<f64>,
    pub median_meng_bound: Vec<f64>,
    pub median_joint_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_joint_bound: Option<f64>,
    /// Median over datasets of joint bound / smallest per-statistic 2·post_p bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_bound_ratio: Option<f64>,
    pub median_sampled_p: Vec<f64>,
    /// Pooled over datasets: fraction of posterior draws whose sampled p-value
    /// exceeds that dataset's joint bound, per statistic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_above_joint_bound: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_cal_p: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_part_p: Option<Vec<f64>>,
    pub unstable_tail: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaReport {
    pub meta: RunMeta,
    pub experiment: &'static str,
    pub config: BetaExperimentConfig,
    pub summary: BetaSummary,
    pub datasets: Vec<DatasetAnalysis>,
}

/// Report plus the curves written alongside it.
#[derive(Debug, Clone)]
pub struct BetaOutcome {
    pub report: BetaReport,
    pub fhat: Option<EmpiricalCdf>,
    pub calibration: Vec<CalibrationMap>,
    pub statistic_names: Vec<String>,
}

fn summarize(results: &[DatasetAnalysis], d: usize) -> BetaSummary {
    let per_stat = |f: &dyn Fn(&DatasetAnalysis, usize) -> Option<f64>| -> Option<Vec<f64>> {
        (0..d)
            .map(|j| {
                let v: Option<Vec<f64>> = results.iter().map(|r| f(r, j)).collect();
                v.map(|v| median(&v))
            })
            .collect()
    };
    let joint_bounds: Option<Vec<f64>> = results.iter().map(|r| r.joint_bound).collect();
    let ratios = joint_bounds.as_ref().map(|b| {
        let r: Vec<f64> = results
            .iter()
            .zip(b)
            .map(|(r, jb)| jb / r.statistics.iter().map(|s| s.meng_bound).fold(f64::INFINITY, f64::min))
            .collect();
        median(&r)
    });
    let above = joint_bounds.as_ref().map(|_| {
        (0..d)
            .map(|j| {
                let (mut hit, mut total) = (0.0, 0.0);
                for r in results {
                    let n = r.sampled_values[j].len() as f64;
                    hit += r.statistics[j].sampled_above_joint_bound.unwrap_or(0.0) * n;
                    total += n;
                }
                hit / total
            })
            .collect()
    });
    BetaSummary {
        datasets: results.len(),
        median_post_p: per_stat(&|r, j| Some(r.statistics[j].post_p.value)).unwrap_or_default(),
        median_meng_bound: per_stat(&|r, j| Some(r.statistics[j].meng_bound)).unwrap_or_default(),
        median_joint_p: median(&results.iter().map(|r| r.joint_p.value).collect::<Vec<_>>()),
        median_joint_bound: joint_bounds.map(|b| median(&b)),
        median_bound_ratio: ratios,
        median_sampled_p: per_stat(&|r, j| Some(r.statistics[j].sampled_p.value)).unwrap_or_default(),
        sampled_above_joint_bound: above,
        median_cal_p: per_stat(&|r, j| r.statistics[j].cal_p.as_ref().map(|e| e.value)),
        median_part_p: per_stat(&|r, j| r.statistics[j].part_p.as_ref().map(|e| e.value)),
        unstable_tail: results
            .iter()
            .any(|r| r.statistics.iter().any(|s| s.part_p.as_ref().is_some_and(|p| p.unstable_tail))),
    }
}

/// Draws `replicates` datasets of `n_obs` beta(true_a, true_b) values.
pub(crate) fn beta_datasets(config: &BetaExperimentConfig, seed: SeedSpec) -> Result<Vec<Dataset>> {
    let dist = Beta::new(config.true_a, config.true_b).map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
    (0..config.replicates)
        .map(|k| {
            let mut rng = seed.child(k as u64).rng();
            // keep draws strictly inside (0, 1) so the beta likelihood is finite
            let y = (0..config.n_obs)
                .map(|_| dist.sample(&mut rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
                .collect();
            Dataset::scalar(y)
        })
        .collect()
}

pub fn run_beta_experiment(config: &BetaExperimentConfig) -> Result<BetaOutcome> {
    config.validate()?;
    let meta = RunMeta::for_config(config)?;
    let model = BetaSymmetricModel::new(config.prior_lo, config.prior_hi, config.grid_size, config.n_obs)?;
    let stats: Vec<TestStatistic> = config.quantiles.iter().map(|&q| sample_quantile_stat(q)).collect::<Result<_>>()?;
    let seed = SeedSpec::new(config.seed);
    let datasets = beta_datasets(config, seed.child(SEED_DATA))?;
    let (tables, results) =
        analyze(&model, &stats, &datasets, &config.monte_carlo, &config.methods, seed.child(SEED_ANALYSIS))?;
    let summary = summarize(&results, stats.len());
    Ok(BetaOutcome {
        report: BetaReport { meta, experiment: "beta", config: config.clone(), summary, datasets: results },
        fhat: tables.fhat,
        calibration: tables.calibration,
        statistic_names: stats.iter().map(|s| s.name.clone()).collect(),
    })
}

impl BetaOutcome {
    /// Writes report.json, replicates.csv, fhat.csv, bound_curve.csv,
    /// calibration.csv and partial_posterior.csv into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = &self.report.meta;
        write_json(&dir.join("report.json"), &self.report)?;

        let mut w = csv_writer(&dir.join("replicates.csv"), meta)?;
        w.write_record(["rho", "replicate", "method", "statistic", "value", "std_error", "bound", "log_ratio"])?;
        for r in &self.report.datasets {
            let rep = r.replicate.to_string();
            for s in &r.statistics {
                let mut rows = vec![
                    ("post_p", &s.post_p, Some(s.meng_bound)),
                    ("sampled_p", &s.sampled_p, None),
                ];
                if let Some(c) = &s.cal_p {
                    rows.push(("cal_p", c, None));
                }
                if let Some(p) = &s.part_p {
                    rows.push(("part_p", p, None));
                }
                for (method, e, bound) in rows {
                    w.write_record([
                        "",
                        &rep,
                        method,
                        &s.name,
                        &fmt_f64(e.value),
                        &fmt_f64(e.std_error),
                        &fmt_opt(bound),
                        "",
                    ])?;
                }
            }
            for (method, e, bound) in [("joint_p", &r.joint_p, r.joint_bound), ("sampled_joint_p", &r.sampled_joint_p, None)] {
                w.write_record(["", &rep, method, "", &fmt_f64(e.value), &fmt_f64(e.std_error), &fmt_opt(bound), ""])?;
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("fhat.csv"), meta)?;
        w.write_record(["support", "cumulative_weight"])?;
        if let Some(f) = &self.fhat {
            for (s, c) in f.support().iter().zip(f.cumulative()) {
                w.write_record([fmt_f64(*s), fmt_f64(*c)])?;
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("bound_curve.csv"), meta)?;
        w.write_record(["replicate", "alpha", "s", "objective"])?;
        for r in &self.report.datasets {
            if let Some(b) = &r.bound_curve {
                for (s, o) in &b.objective_curve {
                    w.write_record([r.replicate.to_string(), fmt_f64(b.alpha), fmt_f64(*s), fmt_f64(*o)])?;
                }
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("calibration.csv"), meta)?;
        w.write_record(["statistic", "support", "cumulative_weight"])?;
        for (name, m) in self.statistic_names.iter().zip(&self.calibration) {
            for (s, c) in m.ecdf().support().iter().zip(m.ecdf().cumulative()) {
                w.write_record([name.clone(), fmt_f64(*s), fmt_f64(*c)])?;
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("partial_posterior.csv"), meta)?;
        w.write_record(["replicate", "statistic", "theta", "weight"])?;
        for r in &self.report.datasets {
            for (name, p) in self.statistic_names.iter().zip(&r.partial_posteriors) {
                for (t, wt) in p.grid.iter().zip(&p.weights) {
                    w.write_record([r.replicate.to_string(), name.clone(), fmt_f64(t.0[0]), fmt_f64(*wt)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BetaExperimentConfig {
        BetaExperimentConfig {
            grid_size: 256,
            replicates: 2,
            monte_carlo: MonteCarloSizes {
                posterior_draws: 40,
                inner_draws: 50,
                calibration_replications: 30,
                calibration_draws: 20,
                calibration_inner: 1,
                n_prior: 8,
                m_sampling: 400,
                l_estimate: 100,
                kde_samples: vec![300],
                kde_bandwidth: None,
                partial_grid_size: 16,
                partial_draws: 200,
                grid_step: 1e-3,
            },
            ..BetaExperimentConfig::default()
        }
    }

    #[test]
    fn report_is_complete() {
        let out = run_beta_experiment(&tiny_config()).unwrap();
        let r = &out.report;
        assert_eq!(r.datasets.len(), 2);
        for d in &r.datasets {
            assert_eq!(d.statistics.len(), 2);
            for s in &d.statistics {
                assert!(s.cal_p.is_some() && s.part_p.is_some());
                assert_eq!(s.post_p.n_outer * s.post_p.n_inner, 2000);
            }
            assert!(d.joint_bound.is_some());
            assert!(d.joint_p.value <= d.statistics[0].post_p.value.min(d.statistics[1].post_p.value));
        }
        assert_eq!(r.summary.median_post_p.len(), 2);
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v["datasets"][0]["statistics"][0]["name"], "quantile_0.05");
        assert_eq!(v["meta"]["artifact"], "jointcheck");
    }

    #[test]
    fn reruns_write_identical_files() {
        let cfg = BetaExperimentConfig { replicates: 1, ..tiny_config() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_beta_experiment(&cfg).unwrap().write_dir(a.path()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        pool.install(|| run_beta_experiment(&cfg).unwrap().write_dir(b.path()).unwrap());
        for f in ["report.json", "replicates.csv", "fhat.csv", "bound_curve.csv", "calibration.csv", "partial_posterior.csv"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, y, "{f}");
        }
        let csv = std::fs::read_to_string(a.path().join("fhat.csv")).unwrap();
        assert!(csv.starts_with("# jointcheck "));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny_config();
        c.quantiles = vec![1.5];
        assert!(run_beta_experiment(&c).is_err());
        let mut c = tiny_config();
        c.monte_carlo.l_estimate = 10_000;
        assert!(run_beta_experiment(&c).is_err());
        let e = serde_json::from_str::<BetaExperimentConfig>(r#"{"n_obs": 10, "bogus": 1}"#);
        assert!(e.is_err());
    }
}

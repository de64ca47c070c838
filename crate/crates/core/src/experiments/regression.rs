//! Conjugate linear regression with a few large coefficients, checked with
//! projections of the response onto design columns.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::bound_at;
use super::{csv_writer, finite, fmt_f64, log_ratio, write_json, RunMeta};
use crate::ecdf::EmpiricalCdf;
use crate::error::{invalid, Error, Result};
use crate::estimators::{simulate_exceedances, PValueEstimate, PValueKind};
use crate::frequency_bound::{algorithm1_cdf, meng_bound, BoundResult};
use crate::model::{make_regression_model, projection_stat, Dataset, TestStatistic};
use crate::seed::SeedSpec;
use crate::stats::median;

const SEED_DATA: u64 = 0;
const SEED_ANALYSIS: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub sigma2: f64,
    /// True coefficients; defaults to (4, 4, 1, …, 1).
    pub beta_star: Option<Vec<f64>>,
    pub rhos: Vec<f64>,
    pub replicates: usize,
    /// 1-based design columns whose projections are the test statistics.
    pub statistics: Vec<usize>,
    pub posterior_draws: usize,
    pub inner_draws: usize,
    /// Replications at the single posterior draw behind the sampled p-values.
    pub sampled_inner: usize,
    pub n_prior: usize,
    pub m_sampling: usize,
    pub l_estimate: usize,
    pub grid_step: f64,
    pub seed: u64,
}

impl Default for RegressionExperimentConfig {
    fn default() -> Self {
        RegressionExperimentConfig {
            n: 200,
            d: 100,
            sigma2: 1.0,
            beta_star: None,
            rhos: vec![0.0, -0.2, -0.4, -0.6, -0.8],
            replicates: 100,
            statistics: vec![1, 2],
            posterior_draws: 200,
            inner_draws: 100,
            sampled_inner: 10_000,
            n_prior: 100,
            m_sampling: 10_000,
            l_estimate: 2000,
            grid_step: 1e-4,
            seed: 1,
        }
    }
}

impl RegressionExperimentConfig {
    pub fn beta_star(&self) -> Vec<f64> {
        self.beta_star.clone().unwrap_or_else(|| (0..self.d).map(|i| if i < 2 { 4.0 } else { 1.0 }).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d < 2 {
            return invalid("need n >= 1 and d >= 2");
        }
        if !(self.sigma2 > 0.0) {
            return invalid("sigma2 must be positive");
        }
        if self.beta_star().len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, actual: self.beta_star().len() });
        }
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(*r > -1.0 && *r <= 0.0)) {
            return invalid("rhos must be a nonempty list of values in (-1, 0]");
        }
        if self.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        if self.statistics.is_empty() || self.statistics.iter().any(|&c| c == 0 || c > self.d) {
            return invalid(format!("statistics must be 1-based column indices in 1..={}", self.d));
        }
        let sizes = [self.posterior_draws, self.inner_draws, self.sampled_inner, self.n_prior, self.m_sampling, self.l_estimate];
        if sizes.contains(&0) {
            return invalid("Monte Carlo sizes must be at least 1");
        }
        if self.l_estimate > self.m_sampling {
            return invalid("l_estimate must not exceed m_sampling");
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.01) {
            return invalid("grid_step must lie in (0, 0.01]");
        }
        Ok(())
    }
}

/// `(σ²[XᵀX]₁₂, σ²[XᵀX (XᵀX + σ²Σ⁻¹)⁻¹ XᵀX]₁₂)`: the expected conditional
/// covariance of the first two projections and the covariance of their
/// conditional means under the posterior.
pub fn covariance_terms(x: &DMatrix<f64>, sigma2: f64, sigma: &DMatrix<f64>) -> Result<(f64, f64)> {
    let d = x.ncols();
    if d < 2 {
        return invalid("need at least two columns");
    }
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: sigma.nrows() });
    }
    let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| Error::Singular("prior covariance".into()))?;
    let gram = x.transpose() * x;
    let m = &gram + sigma_inv * sigma2;
    let m_inv = m.cholesky().ok_or_else(|| Error::Singular("posterior precision".into()))?.inverse();
    let inner = &gram * m_inv * &gram;
    Ok((sigma2 * gram[(0, 1)], sigma2 * inner[(0, 1)]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRatios {
    pub post_p: Option<f64>,
    pub sampled_p: Option<f64>,
    pub joint_p: Option<f64>,
    pub joint_bound: Option<f64>,
    pub sampled_joint_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionRecord {
    pub rho: f64,
    pub replicate: usize,
    pub seed: SeedSpec,
    /// Posterior predictive p-value of the first statistic (the normalizer).
    pub post_p: PValueEstimate,
    pub meng_bound: f64,
    pub sampled_p: PValueEstimate,
    pub joint_p: PValueEstimate,
    pub joint_bound: f64,
    pub sampled_joint_p: PValueEstimate,
    /// `log₁₀(value / (2·post_p))`; null when not finite.
    pub log_ratios: LogRatios,
    pub covariance_terms: (f64, f64),
    #[serde(skip)]
    raw_log_ratios: [f64; 5],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoSummary {
    pub rho: f64,
    pub replicates: usize,
    /// Medians of the log ratios across replicates (null when not finite).
    pub median_log_ratio: LogRatios,
    /// Fraction of designs whose two covariance terms share sign.
    pub covariance_sign_agreement: f64,
}

impl RhoSummary {
    /// Medians as raw floats, `-inf` included, in the order
    /// post_p, sampled_p, joint_p, joint_bound, sampled_joint_p.
    pub fn raw_medians(records: &[&RegressionRecord]) -> [f64; 5] {
        std::array::from_fn(|m| median(&records.iter().map(|r| r.raw_log_ratios[m]).collect::<Vec<_>>()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionReport {
    pub meta: RunMeta,
    pub experiment: &'static str,
    pub config: RegressionExperimentConfig,
    pub summary: Vec<RhoSummary>,
    pub records: Vec<RegressionRecord>,
}

#[derive(Debug, Clone)]
pub struct RegressionOutcome {
    pub report: RegressionReport,
    /// F̂ and bound objective of replicate 0 at each ρ.
    pub curves: Vec<(f64, EmpiricalCdf, BoundResult)>,
}

pub(crate) fn regression_dataset(config: &RegressionExperimentConfig, seed: SeedSpec) -> Result<Dataset> {
    let mut rng = seed.rng();
    let (n, d) = (config.n, config.d);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_vec(config.beta_star());
    let noise = DVector::from_fn(n, |_, _| config.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal));
    let y = &x * beta + noise;
    Dataset::regression(Arc::new(x), y)
}

fn record(
    config: &RegressionExperimentConfig,
    rho: f64,
    replicate: usize,
    data: &Dataset,
    seed: SeedSpec,
) -> Result<(RegressionRecord, EmpiricalCdf, BoundResult)> {
    let Dataset::Regression { x, .. } = data else { unreachable!("regression dataset") };
    let model = make_regression_model(x.clone(), config.sigma2, rho)?;
    let stats: Vec<TestStatistic> = config
        .statistics
        .iter()
        .map(|&c| Ok(projection_stat(x.column(c - 1).iter().copied().collect())?.with_name(format!("x{c}_projection"))))
        .collect::<Result<_>>()?;
    let table = simulate_exceedances(&model, data, &stats, config.posterior_draws, config.inner_draws, seed.child(0))?;
    let post_p = table.marginal_estimate(0);
    let joint_p = table.joint_estimate();
    let fhat = algorithm1_cdf(&model, &stats, config.n_prior, config.m_sampling, config.l_estimate, seed.child(1))?;
    let bound = bound_at(&fhat, joint_p.value, config.grid_step)?;
    let single = simulate_exceedances(&model, data, &stats, 1, config.sampled_inner, seed.child(2))?;
    let sampled_p = PValueEstimate { kind: PValueKind::Sampled, ..single.marginal_estimate(0) };
    let sampled_joint_p = PValueEstimate { kind: PValueKind::SampledJoint, ..single.joint_estimate() };
    let raw = [
        log_ratio(post_p.value, post_p.value),
        log_ratio(sampled_p.value, post_p.value),
        log_ratio(joint_p.value, post_p.value),
        log_ratio(bound.bound, post_p.value),
        log_ratio(sampled_joint_p.value, post_p.value),
    ];
    let cov = covariance_terms(x, config.sigma2, model.prior_cov())?;
    let rec = RegressionRecord {
        rho,
        replicate,
        seed,
        meng_bound: meng_bound(post_p.value),
        post_p,
        sampled_p,
        joint_bound: bound.bound,
        joint_p,
        sampled_joint_p,
        log_ratios: LogRatios {
            post_p: finite(raw[0]),
            sampled_p: finite(raw[1]),
            joint_p: finite(raw[2]),
            joint_bound: finite(raw[3]),
            sampled_joint_p: finite(raw[4]),
        },
        covariance_terms: cov,
        raw_log_ratios: raw,
    };
    Ok((rec, fhat, bound))
}

/// For each ρ and replicate: a fresh Gaussian design, a response from the true
/// coefficients, and the p-values of the first statistic and of the joint set.
///
/// Replicate `k` uses the same design and response at every ρ.
pub fn run_regression_experiment(config: &RegressionExperimentConfig) -> Result<RegressionOutcome> {
    config.validate()?;
    let meta = RunMeta::for_config(config)?;
    let seed = SeedSpec::new(config.seed);
    let datasets: Vec<Dataset> = (0..config.replicates)
        .into_par_iter()
        .map(|k| regression_dataset(config, seed.child(SEED_DATA).child(k as u64)))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..config.rhos.len()).flat_map(|r| (0..config.replicates).map(move |k| (r, k))).collect();
    let results: Vec<(RegressionRecord, Option<(EmpiricalCdf, BoundResult)>)> = tasks
        .par_iter()
        .map(|&(r, k)| {
            let s = seed.child(SEED_ANALYSIS).child(r as u64).child(k as u64);
            let (rec, fhat, bound) = record(config, config.rhos[r], k, &datasets[k], s)?;
            Ok((rec, (k == 0).then_some((fhat, bound))))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(results.len());
    let mut curves = Vec::new();
    for (rec, curve) in results {
        if let Some((f, b)) = curve {
            curves.push((rec.rho, f, b));
        }
        records.push(rec);
    }
    let summary = config
        .rhos
        .iter()
        .map(|&rho| {
            let group: Vec<&RegressionRecord> = records.iter().filter(|r| r.rho == rho).collect();
            let m = RhoSummary::raw_medians(&group);
            let agree = group.iter().filter(|r| r.covariance_terms.0 * r.covariance_terms.1 > 0.0).count();
            RhoSummary {
                rho,
                replicates: group.len(),
                median_log_ratio: LogRatios {
                    post_p: finite(m[0]),
                    sampled_p: finite(m[1]),
                    joint_p: finite(m[2]),
                    joint_bound: finite(m[3]),
                    sampled_joint_p: finite(m[4]),
                },
                covariance_sign_agreement: agree as f64 / group.len() as f64,
            }
        })
        .collect();
    Ok(RegressionOutcome {
        report: RegressionReport { meta, experiment: "regression", config: config.clone(), summary, records },
        curves,
    })
}

impl RegressionReport {
    /// Raw median log ratios (post_p, sampled_p, joint_p, joint_bound,
    /// sampled_joint_p) at each ρ, `-inf` included.
    pub fn raw_medians(&self) -> Vec<(f64, [f64; 5])> {
        self.config
            .rhos
            .iter()
            .map(|&rho| {
                let g: Vec<&RegressionRecord> = self.records.iter().filter(|r| r.rho == rho).collect();
                (rho, RhoSummary::raw_medians(&g))
            })
            .collect()
    }
}

impl RegressionOutcome {
    /// Writes report.json, replicates.csv, fhat.csv and bound_curve.csv into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = &self.report.meta;
        write_json(&dir.join("report.json"), &self.report)?;

        let mut w = csv_writer(&dir.join("replicates.csv"), meta)?;
        w.write_record(["rho", "replicate", "method", "value", "bound", "log_ratio"])?;
        for r in &self.report.records {
            let rows = [
                ("post_p", r.post_p.value, fmt_f64(r.meng_bound)),
                ("sampled_p", r.sampled_p.value, String::new()),
                ("joint_p", r.joint_p.value, fmt_f64(r.joint_bound)),
                ("joint_bound", r.joint_bound, String::new()),
                ("sampled_joint_p", r.sampled_joint_p.value, String::new()),
            ];
            for ((method, value, bound), lr) in rows.into_iter().zip(r.raw_log_ratios) {
                w.write_record([fmt_f64(r.rho), r.replicate.to_string(), method.into(), fmt_f64(value), bound, fmt_f64(lr)])?;
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("fhat.csv"), meta)?;
        w.write_record(["rho", "replicate", "support", "cumulative_weight"])?;
        for (rho, f, _) in &self.curves {
            for (s, c) in f.support().iter().zip(f.cumulative()) {
                w.write_record([fmt_f64(*rho), "0".into(), fmt_f64(*s), fmt_f64(*c)])?;
            }
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("bound_curve.csv"), meta)?;
        w.write_record(["rho", "replicate", "alpha", "s", "objective"])?;
        for (rho, _, b) in &self.curves {
            for (s, o) in &b.objective_curve {
                w.write_record([fmt_f64(*rho), "0".into(), fmt_f64(b.alpha), fmt_f64(*s), fmt_f64(*o)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prior_covariance, GenerativeModel, RegressionModel};
    use crate::stats::mean;
    use approx::assert_relative_eq;

    #[test]
    fn orthogonal_columns_give_zero_terms() {
        let x = DMatrix::identity(2, 2);
        let (a, b) = covariance_terms(&x, 1.0, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn identical_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        let (a, b) = covariance_terms(&x, 2.0, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(a, 2.0 * 6.0, epsilon = 1e-12);
        assert!(b > 0.0);
        assert!(covariance_terms(&x, 1.0, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn terms_match_monte_carlo_total_covariance() {
        let mut rng = SeedSpec::new(3).rng();
        let x = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma2 = 0.7;
        let model = RegressionModel::new(Arc::new(x.clone()), sigma2, -0.3).unwrap();
        let y = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::regression(Arc::new(x.clone()), y).unwrap();
        let (t1, t2) = covariance_terms(&x, sigma2, model.prior_cov()).unwrap();
        let n = 100_000;
        let draws = model.sample_posterior(&data, n, &mut rng).unwrap();
        // covariance of conditional means XᵢᵀXβ over posterior draws
        let g = x.transpose() * &x;
        let m: Vec<(f64, f64)> = draws
            .iter()
            .map(|b| {
                let gb = &g * DVector::from_column_slice(b.as_slice());
                (gb[0], gb[1])
            })
            .collect();
        let (ma, mb) = (mean(&m.iter().map(|p| p.0).collect::<Vec<_>>()), mean(&m.iter().map(|p| p.1).collect::<Vec<_>>()));
        let prods: Vec<f64> = m.iter().map(|(a, b)| (a - ma) * (b - mb)).collect();
        let cov = mean(&prods);
        let se = crate::stats::sample_variance(&prods).sqrt() / (n as f64).sqrt();
        assert!((cov - t2).abs() < 3.0 * se + 1e-9, "{cov} {t2} {se}");
        // total predictive covariance = expected conditional + covariance of means
        let mut rng2 = SeedSpec::new(4).rng();
        let stats = [projection_stat(x.column(0).iter().copied().collect()).unwrap(), projection_stat(x.column(1).iter().copied().collect()).unwrap()];
        let mut sims = Vec::new();
        for b in &draws {
            model.simulate_statistics(b, &stats, 1, &mut rng2, &mut sims).unwrap();
        }
        let a: Vec<f64> = sims.chunks(2).map(|r| r[0]).collect();
        let c: Vec<f64> = sims.chunks(2).map(|r| r[1]).collect();
        let (ma, mc) = (mean(&a), mean(&c));
        let prods: Vec<f64> = a.iter().zip(&c).map(|(u, v)| (u - ma) * (v - mc)).collect();
        let total = mean(&prods);
        let se = crate::stats::sample_variance(&prods).sqrt() / (n as f64).sqrt();
        assert!((total - (t1 + t2)).abs() < 3.0 * se, "{total} {} {se}", t1 + t2);
    }

    #[test]
    fn terms_share_sign_at_zero_rho_for_most_designs() {
        let cfg = RegressionExperimentConfig::default();
        let agree = (0..100)
            .filter(|&k| {
                let Dataset::Regression { x, .. } = regression_dataset(&cfg, SeedSpec::new(11).child(k)).unwrap() else {
                    unreachable!()
                };
                let (a, b) = covariance_terms(&x, 1.0, &prior_covariance(cfg.d, 0.0)).unwrap();
                a * b > 0.0
            })
            .count();
        assert!(agree >= 90, "{agree}");
    }

    fn small() -> RegressionExperimentConfig {
        RegressionExperimentConfig {
            n: 30,
            d: 6,
            rhos: vec![0.0, -0.5],
            replicates: 3,
            posterior_draws: 20,
            inner_draws: 20,
            sampled_inner: 200,
            n_prior: 10,
            m_sampling: 300,
            l_estimate: 50,
            grid_step: 1e-3,
            ..RegressionExperimentConfig::default()
        }
    }

    #[test]
    fn normalizer_log_ratio_is_exact_and_files_are_stable() {
        let out = run_regression_experiment(&small()).unwrap();
        assert_eq!(out.report.records.len(), 6);
        for r in &out.report.records {
            assert_eq!(r.log_ratios.post_p, Some(-(2f64.log10())));
        }
        // same replicate index shares its data across rho
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        out.write_dir(a.path()).unwrap();
        run_regression_experiment(&small()).unwrap().write_dir(b.path()).unwrap();
        for f in ["report.json", "replicates.csv", "fhat.csv", "bound_curve.csv"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(run_regression_experiment(&RegressionExperimentConfig { rhos: vec![0.5], ..small() }).is_err());
        assert!(run_regression_experiment(&RegressionExperimentConfig { statistics: vec![0], ..small() }).is_err());
        assert!(run_regression_experiment(&RegressionExperimentConfig { beta_star: Some(vec![1.0]), ..small() }).is_err());
    }
}

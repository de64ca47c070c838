use serde::{Deserialize, Serialize};

use crate::calibration::{build_calibration_maps, cal_p, kde_log_densities, part_p_from_posterior};
use crate::calibration::{CalibrationMap, PartialPosterior};
use crate::ecdf::EmpiricalCdf;
use crate::error::{invalid, Error, Result};
use crate::estimators::{simulate_exceedances, PValueEstimate, PValueKind};
use crate::frequency_bound::{algorithm1_cdf, meng_bound, theorem1_bound, BoundResult};
use crate::model::{observed_statistics, Dataset, GenerativeModel, ParamVector, TestStatistic};
use crate::seed::SeedSpec;
use crate::stats::sample_variance;

// children of the analysis seed
const SEED_FHAT: u64 = 0;
const SEED_CALIBRATION: u64 = 1;
const SEED_KDE: u64 = 2;
const SEED_DATASETS: u64 = 3;

/// Monte Carlo sizes. Defaults follow the large-sample reference setting and
/// take minutes to hours on one core; example configurations shrink them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSizes {
    /// Posterior draws for post-p, joint-p and the sampled p-value distribution.
    pub posterior_draws: usize,
    /// Replications per posterior draw.
    pub inner_draws: usize,
    pub calibration_replications: usize,
    pub calibration_draws: usize,
    pub calibration_inner: usize,
    pub n_prior: usize,
    pub m_sampling: usize,
    pub l_estimate: usize,
    /// KDE sample count per statistic; a single entry applies to all.
    pub kde_samples: Vec<usize>,
    pub kde_bandwidth: Option<f64>,
    pub partial_grid_size: usize,
    pub partial_draws: usize,
    pub grid_step: f64,
}

impl Default for MonteCarloSizes {
    fn default() -> Self {
        MonteCarloSizes {
            posterior_draws: 1000,
            inner_draws: 1000,
            calibration_replications: 2000,
            calibration_draws: 1000,
            calibration_inner: 1,
            n_prior: 250,
            m_sampling: 50_000,
            l_estimate: 10_000,
            kde_samples: vec![800_000, 2_000_000],
            kde_bandwidth: None,
            partial_grid_size: 128,
            partial_draws: 4000,
            grid_step: 1e-4,
        }
    }
}

impl MonteCarloSizes {
    pub fn validate(&self, n_stats: usize, methods: &Methods) -> Result<()> {
        let positive = [
            ("posterior_draws", self.posterior_draws),
            ("inner_draws", self.inner_draws),
            ("calibration_replications", self.calibration_replications),
            ("calibration_draws", self.calibration_draws),
            ("calibration_inner", self.calibration_inner),
            ("n_prior", self.n_prior),
            ("m_sampling", self.m_sampling),
            ("l_estimate", self.l_estimate),
            ("partial_grid_size", self.partial_grid_size),
            ("partial_draws", self.partial_draws),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return invalid(format!("{name} must be at least 1"));
        }
        if self.l_estimate > self.m_sampling {
            return invalid("l_estimate must not exceed m_sampling");
        }
        if methods.calibrated && self.calibration_replications < 2 {
            return invalid("calibration_replications must be at least 2");
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.01) {
            return invalid("grid_step must lie in (0, 0.01]");
        }
        if methods.partial {
            self.kde_counts(n_stats)?;
        }
        Ok(())
    }

    fn kde_counts(&self, n_stats: usize) -> Result<Vec<usize>> {
        let counts = match self.kde_samples.as_slice() {
            [m] => vec![*m; n_stats],
            v if v.len() == n_stats => v.to_vec(),
            v => return Err(Error::DimensionMismatch { expected: n_stats, actual: v.len() }),
        };
        if counts.iter().any(|&m| m < 2) {
            return invalid("kde_samples entries must be at least 2");
        }
        Ok(counts)
    }
}

/// Optional, expensive methods. Posterior, sampled and joint p-values are
/// always computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Methods {
    pub bound: bool,
    pub calibrated: bool,
    pub partial: bool,
}

impl Default for Methods {
    fn default() -> Self {
        Methods { bound: true, calibrated: true, partial: true }
    }
}

/// Data-independent quantities shared by every analyzed dataset.
#[derive(Debug, Clone)]
pub struct SharedTables {
    pub fhat: Option<EmpiricalCdf>,
    pub calibration: Vec<CalibrationMap>,
    pub partial_grid: Vec<ParamVector>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatisticResult {
    pub name: String,
    /// Raw (not tail-oriented) observed value.
    pub observed: f64,
    pub post_p: PValueEstimate,
    pub meng_bound: f64,
    /// Lower median over posterior draws.
    pub sampled_p: PValueEstimate,
    /// Fraction of posterior draws whose sampled p-value exceeds the joint bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_above_joint_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cal_p: Option<PValueEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub part_p: Option<PValueEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetAnalysis {
    pub replicate: usize,
    pub seed: SeedSpec,
    pub statistics: Vec<StatisticResult>,
    pub joint_p: PValueEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_bound_s_star: Option<f64>,
    /// Lower median over posterior draws.
    pub sampled_joint_p: PValueEstimate,
    #[serde(skip)]
    pub bound_curve: Option<BoundResult>,
    #[serde(skip)]
    pub partial_posteriors: Vec<PartialPosterior>,
    #[serde(skip)]
    pub sampled_values: Vec<Vec<f64>>,
}

/// Lower median: always one of the inputs, hence a count ratio.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn median_estimate(kind: PValueKind, values: &[f64], n_inner: usize, seed: SeedSpec) -> PValueEstimate {
    let n = values.len();
    // asymptotic standard error of a median, normal approximation
    let se = if n > 1 { 1.2533 * (sample_variance(values) / n as f64).sqrt() } else { 0.0 };
    PValueEstimate {
        kind,
        value: lower_median(values),
        std_error: se.min(0.5),
        n_outer: n,
        n_inner,
        seed,
        unstable_tail: false,
    }
}

/// Bound at `alpha`, with `alpha = 1` giving the trivial bound.
pub(crate) fn bound_at(fhat: &EmpiricalCdf, alpha: f64, grid_step: f64) -> Result<BoundResult> {
    if alpha >= 1.0 {
        return Ok(BoundResult { alpha, bound: 1.0, s_star: 1.0, objective_curve: Vec::new() });
    }
    theorem1_bound(fhat, alpha, grid_step)
}

/// Runs every configured method on each dataset. Tables that do not depend on
/// the data (F̂, calibration maps, KDE simulations) are built once.
pub fn analyze(
    model: &dyn GenerativeModel,
    stats: &[TestStatistic],
    datasets: &[Dataset],
    sizes: &MonteCarloSizes,
    methods: &Methods,
    seed: SeedSpec,
) -> Result<(SharedTables, Vec<DatasetAnalysis>)> {
    if stats.is_empty() {
        return invalid("at least one test statistic is required");
    }
    if datasets.is_empty() {
        return Err(Error::EmptyData);
    }
    sizes.validate(stats.len(), methods)?;
    let d = stats.len();

    let fhat = if methods.bound {
        log::info!("estimating F̂: {} prior draws x {} datasets", sizes.n_prior, sizes.m_sampling);
        Some(algorithm1_cdf(model, stats, sizes.n_prior, sizes.m_sampling, sizes.l_estimate, seed.child(SEED_FHAT))?)
    } else {
        None
    };

    let calibration = if methods.calibrated {
        log::info!("building calibration maps from {} replications", sizes.calibration_replications);
        build_calibration_maps(
            model,
            stats,
            sizes.calibration_replications,
            sizes.calibration_draws,
            sizes.calibration_inner,
            seed.child(SEED_CALIBRATION),
        )?
    } else {
        Vec::new()
    };

    let raw_observed: Vec<Vec<f64>> =
        datasets.iter().map(|y| stats.iter().map(|s| s.eval(y)).collect()).collect::<Result<_>>()?;
    let observed: Vec<Vec<f64>> = datasets.iter().map(|y| observed_statistics(stats, y)).collect::<Result<_>>()?;

    let (partial_grid, log_densities) = if methods.partial {
        let Some(grid) = model.parameter_grid(sizes.partial_grid_size) else {
            return Err(Error::Unsupported("partial p-values need a model with a scalar parameter grid".into()));
        };
        log::info!("fitting KDEs on {} grid points", grid.len());
        let ld = kde_log_densities(
            model,
            stats,
            &grid,
            &sizes.kde_counts(d)?,
            &observed,
            sizes.kde_bandwidth,
            seed.child(SEED_KDE),
        )?;
        (grid, ld)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut results = Vec::with_capacity(datasets.len());
    for (k, y) in datasets.iter().enumerate() {
        log::info!("analyzing dataset {}/{}", k + 1, datasets.len());
        let ds_seed = seed.child(SEED_DATASETS).child(k as u64);
        let table = simulate_exceedances(model, y, stats, sizes.posterior_draws, sizes.inner_draws, ds_seed.child(0))?;
        let joint_p = table.joint_estimate();
        let bound_curve = match &fhat {
            Some(f) => Some(bound_at(f, joint_p.value, sizes.grid_step)?),
            None => None,
        };
        let joint_bound = bound_curve.as_ref().map(|b| b.bound);
        let sampled_values: Vec<Vec<f64>> = (0..d).map(|j| table.sampled_values(j)).collect();
        let mut partial_posteriors = Vec::new();
        let mut statistics = Vec::with_capacity(d);
        for (j, stat) in stats.iter().enumerate() {
            let post_p = table.marginal_estimate(j);
            let sampled = &sampled_values[j];
            let part_p = if methods.partial {
                let post = PartialPosterior::from_log_densities(model, y, &partial_grid, &log_densities[k][j])?;
                let est = part_p_from_posterior(model, y, stat, &post, sizes.partial_draws, ds_seed.child(1).child(j as u64))?;
                partial_posteriors.push(post);
                Some(est)
            } else {
                None
            };
            statistics.push(StatisticResult {
                name: stat.name.clone(),
                observed: raw_observed[k][j],
                meng_bound: meng_bound(post_p.value),
                sampled_p: median_estimate(PValueKind::Sampled, sampled, sizes.inner_draws, ds_seed.child(0)),
                sampled_above_joint_bound: joint_bound
                    .map(|b| sampled.iter().filter(|&&s| s > b).count() as f64 / sampled.len() as f64),
                cal_p: calibration.get(j).map(|m| cal_p(m, post_p.value)),
                part_p,
                post_p,
            });
        }
        let sampled_joint_p = median_estimate(
            PValueKind::SampledJoint,
            &table.sampled_joint_values(),
            sizes.inner_draws,
            ds_seed.child(0),
        );
        results.push(DatasetAnalysis {
            replicate: k,
            seed: ds_seed,
            statistics,
            joint_p,
            joint_bound,
            joint_bound_s_star: bound_curve.as_ref().map(|b| b.s_star),
            sampled_joint_p,
            bound_curve,
            partial_posteriors,
            sampled_values,
        });
    }
    Ok((SharedTables { fhat, calibration, partial_grid }, results))
}

//! Calibrated posterior predictive p-values and partial predictive p-values.
//!
//! A calibration map is the empirical CDF of posterior predictive p-values over
//! prior-predictive datasets. Partial posteriors divide the posterior by a kernel
//! density estimate of the statistic's sampling density, evaluated on a grid.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecdf::EmpiricalCdf;
use crate::error::{invalid, Error, Result};
use crate::estimators::{exceedances_at, simulate_exceedances, ExceedanceTable, PValueEstimate, PValueKind};
use crate::model::{categorical_inverse_cdf, observed_statistics, sample_prior_predictive};
use crate::model::{Dataset, GenerativeModel, ParamVector, TestStatistic};
use crate::seed::{SeedSpec, PHASE_AUX, PHASE_POSTERIOR, PHASE_REPLICATE};
use crate::stats::sample_variance;

/// Densities below this are floored when dividing them out of the posterior.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// `Ĥ`: empirical CDF of posterior predictive p-values under the prior predictive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    ecdf: EmpiricalCdf,
    replications: usize,
    seed: SeedSpec,
}

impl CalibrationMap {
    pub fn from_post_p_values(values: &[f64], seed: SeedSpec) -> Result<Self> {
        if values.len() < 2 {
            return invalid("a calibration map needs at least 2 replications");
        }
        Ok(CalibrationMap { ecdf: EmpiricalCdf::from_samples(values)?, replications: values.len(), seed })
    }

    pub fn eval(&self, post_p: f64) -> f64 {
        self.ecdf.eval(post_p)
    }

    pub fn ecdf(&self) -> &EmpiricalCdf {
        &self.ecdf
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn seed(&self) -> SeedSpec {
        self.seed
    }
}

/// Calibration map of one statistic from `s` prior-predictive datasets.
pub fn build_calibration_map(
    model: &dyn GenerativeModel,
    stat: &TestStatistic,
    s: usize,
    n_outer: usize,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<CalibrationMap> {
    Ok(build_calibration_maps(model, std::slice::from_ref(stat), s, n_outer, n_inner, seed)?.remove(0))
}

/// Calibration maps for several statistics sharing the same replications.
pub fn build_calibration_maps(
    model: &dyn GenerativeModel,
    stats: &[TestStatistic],
    s: usize,
    n_outer: usize,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<Vec<CalibrationMap>> {
    if s < 2 {
        return invalid("a calibration map needs at least 2 replications");
    }
    let datasets = sample_prior_predictive(model, s, seed.child(PHASE_AUX))?;
    let inner = seed.child(PHASE_REPLICATE);
    let per_rep: Vec<Vec<f64>> = datasets
        .par_iter()
        .enumerate()
        .map(|(i, (_, y))| {
            let t = simulate_exceedances(model, y, stats, n_outer, n_inner, inner.child(i as u64))?;
            Ok((0..stats.len()).map(|j| t.marginal_estimate(j).value).collect())
        })
        .collect::<Result<_>>()?;
    (0..stats.len())
        .map(|j| {
            let values: Vec<f64> = per_rep.iter().map(|r| r[j]).collect();
            CalibrationMap::from_post_p_values(&values, seed)
        })
        .collect()
}

/// `Ĥ(observed_post_p)` with a binomial standard error.
pub fn cal_p(map: &CalibrationMap, observed_post_p: f64) -> PValueEstimate {
    let value = map.eval(observed_post_p);
    PValueEstimate {
        kind: PValueKind::Calibrated,
        value,
        std_error: (value * (1.0 - value) / map.replications as f64).sqrt(),
        n_outer: map.replications,
        n_inner: 1,
        seed: map.seed,
        unstable_tail: false,
    }
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    samples: Vec<f64>,
    bandwidth: f64,
}

fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule: `1.06 · min(sd, IQR / 1.349) · n^(-1/5)`. Falls back to
/// the standard deviation when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return invalid("bandwidth selection needs at least 2 samples");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let sd = sample_variance(&sorted).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return invalid("samples are identical; bandwidth would be zero");
    }
    let iqr = interpolated_quantile(&sorted, 0.75) - interpolated_quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    Ok(1.06 * spread * (sorted.len() as f64).powf(-0.2))
}

pub fn kde_fit(samples: &[f64]) -> Result<DensityEstimate> {
    let h = silverman_bandwidth(samples)?;
    DensityEstimate::with_bandwidth(samples, h)
}

impl DensityEstimate {
    pub fn with_bandwidth(samples: &[f64], bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData);
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return invalid(format!("bandwidth must be positive and finite, got {bandwidth}"));
        }
        let mut samples = samples.to_vec();
        samples.sort_unstable_by(f64::total_cmp);
        Ok(DensityEstimate { samples, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Log density by log-sum-exp; finite far into the tails.
    pub fn log_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s = &self.samples;
        let pos = s.partition_point(|&v| v < x);
        let nearest = [pos.checked_sub(1), (pos < s.len()).then_some(pos)]
            .into_iter()
            .flatten()
            .map(|i| ((x - s[i]) / h).abs())
            .fold(f64::INFINITY, f64::min);
        // terms more than exp(-750) below the largest one do not register
        let reach = h * (nearest * nearest + 1500.0).sqrt();
        let lo = s.partition_point(|&v| v < x - reach);
        let hi = s.partition_point(|&v| v <= x + reach);
        let zmin2 = nearest * nearest;
        let sum: f64 = s[lo..hi]
            .iter()
            .map(|&v| {
                let z = (x - v) / h;
                (-(z * z - zmin2) / 2.0).exp()
            })
            .sum();
        -zmin2 / 2.0 + sum.ln() - (s.len() as f64 * h).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

/// `log p̂(T_j(y_k) | θ_g)` for every dataset `k`, statistic `j` and grid point `g`,
/// indexed `[k][j][g]`.
///
/// Each grid point simulates `max(m_kde)` statistic vectors once; statistic `j`
/// uses the first `m_kde[j]` of them. `observed` holds oriented statistic values.
pub fn kde_log_densities(
    model: &dyn GenerativeModel,
    stats: &[TestStatistic],
    grid: &[ParamVector],
    m_kde: &[usize],
    observed: &[Vec<f64>],
    bandwidth: Option<f64>,
    seed: SeedSpec,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = stats.len();
    if m_kde.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: m_kde.len() });
    }
    if grid.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(o) = observed.iter().find(|o| o.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: o.len() });
    }
    let m_max = m_kde.iter().copied().max().unwrap_or(0);
    if m_kde.iter().any(|&m| m < 2) {
        return invalid("each KDE needs at least 2 samples");
    }
    // [g][k][j]
    let per_grid: Vec<Vec<Vec<f64>>> = grid
        .par_iter()
        .enumerate()
        .map(|(g, theta)| {
            let mut rng = seed.child(g as u64).rng();
            let mut sims = Vec::with_capacity(m_max * d);
            model.simulate_statistics(theta, stats, m_max, &mut rng, &mut sims)?;
            let kdes: Vec<DensityEstimate> = (0..d)
                .map(|j| {
                    let col: Vec<f64> = sims.chunks_exact(d).take(m_kde[j]).map(|r| r[j]).collect();
                    match bandwidth {
                        Some(h) => DensityEstimate::with_bandwidth(&col, h),
                        None => kde_fit(&col),
                    }
                })
                .collect::<Result<_>>()?;
            Ok(observed.iter().map(|o| (0..d).map(|j| kdes[j].log_density(o[j])).collect()).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..observed.len())
        .map(|k| (0..d).map(|j| per_grid.iter().map(|row| row[k][j]).collect()).collect())
        .collect())
}

/// Normalized partial-posterior weights on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialPosterior {
    pub grid: Vec<ParamVector>,
    pub weights: Vec<f64>,
    /// Some density fell below [`DENSITY_FLOOR`] and was floored.
    pub unstable_tail: bool,
}

fn normalize_log(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return invalid("all grid weights are zero");
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

impl PartialPosterior {
    /// Weights `∝ p(y | θ) p(θ) / p̂(T(y) | θ)` on `grid`.
    pub fn from_log_densities(
        model: &dyn GenerativeModel,
        data: &Dataset,
        grid: &[ParamVector],
        log_density: &[f64],
    ) -> Result<Self> {
        if grid.len() != log_density.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), actual: log_density.len() });
        }
        let floor = DENSITY_FLOOR.ln();
        let mut unstable_tail = false;
        let log_w: Vec<f64> = grid
            .iter()
            .zip(log_density)
            .map(|(theta, &ld)| {
                if ld < floor {
                    unstable_tail = true;
                }
                Ok(model.log_joint(theta, data)? - ld.max(floor))
            })
            .collect::<Result<_>>()?;
        Ok(PartialPosterior { grid: grid.to_vec(), weights: normalize_log(&log_w)?, unstable_tail })
    }

    /// Full grid posterior: the same construction without the density factor.
    pub fn full_posterior(model: &dyn GenerativeModel, data: &Dataset, grid: &[ParamVector]) -> Result<Self> {
        Self::from_log_densities(model, data, grid, &vec![0.0; grid.len()])
    }

    pub fn write_csv<W: Write>(&self, w: W, preamble: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(p) = preamble {
            writeln!(w, "# {p}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        let dim = self.grid.first().map_or(0, ParamVector::len);
        let mut header: Vec<String> = if dim == 1 {
            vec!["theta".into()]
        } else {
            (1..=dim).map(|i| format!("theta{i}")).collect()
        };
        header.push("weight".into());
        csv.write_record(&header)?;
        for (theta, w) in self.grid.iter().zip(&self.weights) {
            let mut row: Vec<String> = theta.as_slice().iter().map(f64::to_string).collect();
            row.push(w.to_string());
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Predictive exceedance fraction of `stat` with `θ` drawn from `posterior`;
/// one replication per draw.
pub fn part_p_from_posterior(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stat: &TestStatistic,
    posterior: &PartialPosterior,
    n_pred: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    if n_pred == 0 {
        return invalid("n_pred must be at least 1");
    }
    let mut cum = Vec::with_capacity(posterior.weights.len());
    let mut acc = 0.0;
    for w in &posterior.weights {
        acc += w;
        cum.push(acc);
    }
    let mut rng = seed.child(PHASE_POSTERIOR).rng();
    let thetas: Vec<ParamVector> = (0..n_pred)
        .map(|_| posterior.grid[categorical_inverse_cdf(&cum, rng.random::<f64>())].clone())
        .collect();
    let stats = std::slice::from_ref(stat);
    let observed = observed_statistics(stats, data)?;
    let (marginal, joint) = exceedances_at(model, &observed, stats, &thetas, 1, seed.child(PHASE_REPLICATE))?;
    let table = ExceedanceTable { n_outer: n_pred, n_inner: 1, seed, thetas, marginal, joint };
    Ok(PValueEstimate {
        kind: PValueKind::Partial,
        unstable_tail: posterior.unstable_tail,
        ..table.marginal_estimate(0)
    })
}

/// Partial predictive p-value on a parameter grid, with a KDE of `m_kde`
/// simulated statistic values per grid point.
pub fn part_p(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stat: &TestStatistic,
    theta_grid: &[ParamVector],
    m_kde: usize,
    n_pred: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    let stats = std::slice::from_ref(stat);
    let observed = vec![observed_statistics(stats, data)?];
    let ld = kde_log_densities(model, stats, theta_grid, &[m_kde], &observed, None, seed.child(PHASE_AUX))?;
    let posterior = PartialPosterior::from_log_densities(model, data, theta_grid, &ld[0][0])?;
    part_p_from_posterior(model, data, stat, &posterior, n_pred, seed)
}

/// Result of [`importance_resample_partial`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resample {
    pub draws: Vec<ParamVector>,
    /// `1 / Σ w̄ᵢ²` for the normalized weights.
    pub effective_sample_size: f64,
}

/// Multinomial resampling of posterior draws with weights (typically
/// `1 / p̂(T(y) | θ)`), with replacement.
pub fn importance_resample_partial(
    posterior_draws: &[ParamVector],
    weights: &[f64],
    k: usize,
    seed: SeedSpec,
) -> Result<Resample> {
    if posterior_draws.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: posterior_draws.len(), actual: weights.len() });
    }
    if posterior_draws.is_empty() {
        return Err(Error::EmptyData);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return invalid("weights must be finite and nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return invalid("all importance weights are zero");
    }
    let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let effective_sample_size = 1.0 / norm.iter().map(|w| w * w).sum::<f64>();
    let mut cum = Vec::with_capacity(norm.len());
    let mut acc = 0.0;
    for w in &norm {
        acc += w;
        cum.push(acc);
    }
    let mut rng = seed.rng();
    let draws = (0..k)
        .map(|_| posterior_draws[categorical_inverse_cdf(&cum, rng.random::<f64>())].clone())
        .collect();
    Ok(Resample { draws, effective_sample_size })
}

/// Posterior mean of the first parameter coordinate under grid weights.
pub fn grid_mean(posterior: &PartialPosterior) -> f64 {
    posterior.grid.iter().zip(&posterior.weights).map(|(t, w)| t.0[0] * w).sum()
}

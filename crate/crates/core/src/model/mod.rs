//! Bayesian models, datasets, test statistics, and seeded sampling.

mod beta;
mod dataset;
mod normal;
mod regression;
mod statistic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use beta::{make_beta_model, BetaSymmetricModel};
pub use dataset::Dataset;
pub use normal::NormalMeanModel;
pub use regression::{make_regression_model, prior_covariance, RegressionModel};
pub(crate) use regression::psd_factor;
pub use statistic::{projection_stat, sample_quantile_stat, StatisticKind, Tail, TestStatistic};

use crate::error::{invalid, Error, Result};
use crate::seed::{SeedSpec, SimRng};

/// Model parameters: `θ` (length 1) for the beta model, `β` (length d) for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn scalar(v: f64) -> Self {
        ParamVector(vec![v])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn first(&self) -> Result<f64> {
        self.0.first().copied().ok_or_else(|| Error::InvalidParameter("empty parameter vector".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    BetaSymmetric,
    ConjugateRegression,
    NormalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSeed {
    pub master: u64,
}

/// Serializable identity of a model: family, hyperparameters, optional seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub family: ModelFamily,
    pub hyperparameters: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<MasterSeed>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BetaHyper {
    #[serde(default = "default_prior_lo")]
    prior_lo: f64,
    #[serde(default = "default_prior_hi")]
    prior_hi: f64,
    #[serde(default = "default_grid")]
    grid_size: usize,
    #[serde(default = "default_n_obs")]
    n_obs: usize,
}

fn default_n_obs() -> usize {
    100
}

fn default_prior_lo() -> f64 {
    0.5
}
fn default_prior_hi() -> f64 {
    4.0
}
fn default_grid() -> usize {
    2048
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressionHyper {
    #[serde(default = "default_sigma2")]
    sigma2: f64,
    #[serde(default)]
    rho: f64,
    // echoed from the design; checked against the data when present
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    d: Option<usize>,
}

fn default_sigma2() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalHyper {
    #[serde(default)]
    prior_mean: f64,
    #[serde(default = "one")]
    prior_var: f64,
    #[serde(default = "one")]
    noise_var: f64,
    n_obs: usize,
}

fn one() -> f64 {
    1.0
}

impl ModelDescriptor {
    /// Instantiates the described model. Regression models take their design
    /// matrix from `data`.
    pub fn build(&self, data: Option<&Dataset>) -> Result<Box<dyn GenerativeModel>> {
        let hyper = self.hyperparameters.clone();
        match self.family {
            ModelFamily::BetaSymmetric => {
                let h: BetaHyper = serde_json::from_value(hyper)?;
                Ok(Box::new(BetaSymmetricModel::new(h.prior_lo, h.prior_hi, h.grid_size, h.n_obs)?))
            }
            ModelFamily::ConjugateRegression => {
                let h: RegressionHyper = serde_json::from_value(hyper)?;
                let Some(Dataset::Regression { x, .. }) = data else {
                    return invalid("conjugate_regression needs a regression dataset supplying X");
                };
                if let Some(n) = h.n {
                    if n != x.nrows() {
                        return Err(Error::DimensionMismatch { expected: n, actual: x.nrows() });
                    }
                }
                if let Some(d) = h.d {
                    if d != x.ncols() {
                        return Err(Error::DimensionMismatch { expected: d, actual: x.ncols() });
                    }
                }
                Ok(Box::new(make_regression_model(x.clone(), h.sigma2, h.rho)?))
            }
            ModelFamily::NormalMean => {
                let h: NormalHyper = serde_json::from_value(hyper)?;
                Ok(Box::new(NormalMeanModel::new(h.prior_mean, h.prior_var, h.noise_var, h.n_obs)?))
            }
        }
    }
}

/// A Bayesian model `p(θ) p(y | θ)` with the three samplers needed for
/// predictive checking.
///
/// Implementations must be pure functions of their inputs and the supplied
/// generator: equal inputs and equal generator states give equal outputs.
pub trait GenerativeModel: Send + Sync {
    fn descriptor(&self) -> ModelDescriptor;

    fn sample_prior(&self, rng: &mut SimRng) -> ParamVector;

    fn sample_data(&self, theta: &ParamVector, rng: &mut SimRng) -> Result<Dataset>;

    /// Exactly `count` draws from `p(θ | data)`.
    fn sample_posterior(&self, data: &Dataset, count: usize, rng: &mut SimRng) -> Result<Vec<ParamVector>>;

    /// `log p(θ) + log p(data | θ)` up to a constant independent of `θ`.
    fn log_joint(&self, _theta: &ParamVector, _data: &Dataset) -> Result<f64> {
        Err(Error::Unsupported("log_joint".into()))
    }

    /// A uniform grid of `size` parameter values covering the bulk of the prior,
    /// for models with a scalar parameter.
    fn parameter_grid(&self, _size: usize) -> Option<Vec<ParamVector>> {
        None
    }

    /// Simulates `n` datasets from `p(y | θ)` and appends the oriented values of
    /// `stats` for each, row-major (`n × stats.len()`).
    ///
    /// Models may override this with a sampler for the statistics that has the
    /// same joint distribution but skips materializing the data.
    fn simulate_statistics(
        &self,
        theta: &ParamVector,
        stats: &[TestStatistic],
        n: usize,
        rng: &mut SimRng,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.reserve(n * stats.len());
        for _ in 0..n {
            let y = self.sample_data(theta, rng)?;
            for s in stats {
                out.push(s.oriented(&y)?);
            }
        }
        Ok(())
    }
}

/// `n` iid pairs `(θ, y_rep)` from the prior predictive distribution. Pair `i`
/// uses the child stream `seed.child(i)`.
pub fn sample_prior_predictive(
    model: &dyn GenerativeModel,
    n: usize,
    seed: SeedSpec,
) -> Result<Vec<(ParamVector, Dataset)>> {
    if n == 0 {
        return invalid("prior predictive sample size must be at least 1");
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.child(i).rng();
            let theta = model.sample_prior(&mut rng);
            let y = model.sample_data(&theta, &mut rng)?;
            Ok((theta, y))
        })
        .collect()
}

/// Oriented statistic vector of an observed dataset.
pub fn observed_statistics(stats: &[TestStatistic], data: &Dataset) -> Result<Vec<f64>> {
    stats.iter().map(|s| s.oriented(data)).collect()
}

pub(crate) fn categorical_inverse_cdf(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("nonempty cumulative weights");
    let target = u * total;
    cumulative.partition_point(|&c| c < target).min(cumulative.len() - 1)
}

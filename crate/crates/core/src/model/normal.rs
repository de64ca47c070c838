use rand_distr::{Distribution, Normal};

use super::{Dataset, GenerativeModel, ModelDescriptor, ModelFamily, ParamVector};
use crate::error::{invalid, Error, Result};
use crate::seed::SimRng;

/// Normal-normal toy model with a closed-form posterior:
/// `y_i ~ N(θ, noise_var)` iid, `θ ~ N(prior_mean, prior_var)`.
#[derive(Debug, Clone)]
pub struct NormalMeanModel {
    prior_mean: f64,
    prior_var: f64,
    noise_var: f64,
    n_obs: usize,
}

impl NormalMeanModel {
    pub fn new(prior_mean: f64, prior_var: f64, noise_var: f64, n_obs: usize) -> Result<Self> {
        if !(prior_var > 0.0) || !(noise_var > 0.0) || !prior_mean.is_finite() {
            return invalid("normal model needs finite mean and positive variances");
        }
        if n_obs == 0 {
            return invalid("normal model needs at least one observation");
        }
        Ok(Self { prior_mean, prior_var, noise_var, n_obs })
    }

    /// Posterior mean and variance of `θ`.
    pub fn posterior(&self, data: &Dataset) -> Result<(f64, f64)> {
        let Dataset::Scalar(v) = data else {
            return invalid("normal model expects scalar data");
        };
        if v.is_empty() {
            return Err(Error::EmptyData);
        }
        let var = 1.0 / (1.0 / self.prior_var + v.len() as f64 / self.noise_var);
        let sum: f64 = v.iter().sum();
        Ok((var * (self.prior_mean / self.prior_var + sum / self.noise_var), var))
    }
}

impl GenerativeModel for NormalMeanModel {
    /// `prior_mean ± 6` prior standard deviations.
    fn parameter_grid(&self, size: usize) -> Option<Vec<ParamVector>> {
        let half = 6.0 * self.prior_var.sqrt();
        match size {
            0 => None,
            1 => Some(vec![ParamVector::scalar(self.prior_mean)]),
            _ => Some(
                (0..size)
                    .map(|i| ParamVector::scalar(self.prior_mean - half + 2.0 * half * i as f64 / (size - 1) as f64))
                    .collect(),
            ),
        }
    }

    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            family: ModelFamily::NormalMean,
            hyperparameters: serde_json::json!({
                "prior_mean": self.prior_mean,
                "prior_var": self.prior_var,
                "noise_var": self.noise_var,
                "n_obs": self.n_obs,
            }),
            seed: None,
        }
    }

    fn sample_prior(&self, rng: &mut SimRng) -> ParamVector {
        let d = Normal::new(self.prior_mean, self.prior_var.sqrt()).expect("validated");
        ParamVector::scalar(d.sample(rng))
    }

    fn sample_data(&self, theta: &ParamVector, rng: &mut SimRng) -> Result<Dataset> {
        let d = Normal::new(theta.first()?, self.noise_var.sqrt())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Dataset::Scalar((0..self.n_obs).map(|_| d.sample(rng)).collect()))
    }

    fn sample_posterior(&self, data: &Dataset, count: usize, rng: &mut SimRng) -> Result<Vec<ParamVector>> {
        let (m, v) = self.posterior(data)?;
        let d = Normal::new(m, v.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok((0..count).map(|_| ParamVector::scalar(d.sample(rng))).collect())
    }

    fn log_joint(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        let t = theta.first()?;
        let lp = -0.5 * (t - self.prior_mean).powi(2) / self.prior_var;
        let ll: f64 = data.response().iter().map(|y| -0.5 * (y - t).powi(2) / self.noise_var).sum();
        Ok(lp + ll)
    }
}

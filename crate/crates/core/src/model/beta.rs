use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::ln_gamma;

use super::{categorical_inverse_cdf, Dataset, GenerativeModel, ModelDescriptor, ModelFamily, ParamVector, TestStatistic};
use crate::error::{invalid, Error, Result};
use crate::seed::SimRng;

/// `y_i ~ beta(θ, θ)` iid, `θ ~ uniform[prior_lo, prior_hi]`, posterior on a grid.
#[derive(Debug, Clone)]
pub struct BetaSymmetricModel {
    prior_lo: f64,
    prior_hi: f64,
    n_obs: usize,
    grid: Vec<f64>,
    // ln B(θ, θ) at each grid point
    ln_beta: Vec<f64>,
}

pub fn make_beta_model(prior_lo: f64, prior_hi: f64, grid_size: usize) -> Result<BetaSymmetricModel> {
    BetaSymmetricModel::new(prior_lo, prior_hi, grid_size, 100)
}

fn ln_beta_sym(theta: f64) -> f64 {
    2.0 * ln_gamma(theta) - ln_gamma(2.0 * theta)
}

impl BetaSymmetricModel {
    pub fn new(prior_lo: f64, prior_hi: f64, grid_size: usize, n_obs: usize) -> Result<Self> {
        if !(prior_lo > 0.0) || !prior_lo.is_finite() {
            return invalid(format!("beta prior lower bound must be positive, got {prior_lo}"));
        }
        if !(prior_hi > prior_lo) || !prior_hi.is_finite() {
            return invalid(format!("beta prior needs prior_lo < prior_hi, got [{prior_lo}, {prior_hi}]"));
        }
        if grid_size < 2 {
            return invalid("posterior grid needs at least two points");
        }
        if n_obs == 0 {
            return invalid("beta model needs at least one observation");
        }
        let step = (prior_hi - prior_lo) / (grid_size - 1) as f64;
        let grid: Vec<f64> = (0..grid_size).map(|i| prior_lo + step * i as f64).collect();
        let ln_beta = grid.iter().map(|&t| ln_beta_sym(t)).collect();
        Ok(Self { prior_lo, prior_hi, n_obs, grid, ln_beta })
    }

    pub fn with_n_obs(self, n_obs: usize) -> Result<Self> {
        Self::new(self.prior_lo, self.prior_hi, self.grid.len(), n_obs)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn prior_bounds(&self) -> (f64, f64) {
        (self.prior_lo, self.prior_hi)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `Σ ln(y_i (1 - y_i))`, the sufficient statistic of the symmetric beta family.
    fn sufficient(data: &Dataset) -> Result<(f64, usize)> {
        let Dataset::Scalar(v) = data else {
            return invalid("beta model expects scalar data");
        };
        if v.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut s = 0.0;
        for &y in v {
            if !(y > 0.0 && y < 1.0) {
                return invalid(format!("beta data must lie in (0,1), got {y}"));
            }
            s += y.ln() + (1.0 - y).ln();
        }
        Ok((s, v.len()))
    }

    /// Normalized posterior weights on [`grid`](Self::grid).
    pub fn posterior_grid(&self, data: &Dataset) -> Result<Vec<f64>> {
        let (s, n) = Self::sufficient(data)?;
        let logp: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.ln_beta)
            .map(|(&t, &lb)| (t - 1.0) * s - n as f64 * lb)
            .collect();
        Ok(normalize_log_weights(&logp))
    }

    pub fn log_likelihood(&self, theta: f64, data: &Dataset) -> Result<f64> {
        let (s, n) = Self::sufficient(data)?;
        Ok((theta - 1.0) * s - n as f64 * ln_beta_sym(theta))
    }

    fn sampler(theta: &ParamVector) -> Result<Beta<f64>> {
        let t = theta.first()?;
        Beta::new(t, t).map_err(|e| Error::InvalidParameter(format!("beta({t},{t}): {e}")))
    }
}

pub(crate) fn normalize_log_weights(logp: &[f64]) -> Vec<f64> {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

// keep draws strictly inside (0,1) so replicated data always has a finite likelihood
#[inline]
fn open_unit(y: f64) -> f64 {
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl GenerativeModel for BetaSymmetricModel {
    fn parameter_grid(&self, size: usize) -> Option<Vec<ParamVector>> {
        let (lo, hi) = (self.prior_lo, self.prior_hi);
        match size {
            0 => None,
            1 => Some(vec![ParamVector::scalar(0.5 * (lo + hi))]),
            _ => Some((0..size).map(|i| ParamVector::scalar(lo + (hi - lo) * i as f64 / (size - 1) as f64)).collect()),
        }
    }

    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            family: ModelFamily::BetaSymmetric,
            hyperparameters: serde_json::json!({
                "prior_lo": self.prior_lo,
                "prior_hi": self.prior_hi,
                "grid_size": self.grid.len(),
                "n_obs": self.n_obs,
            }),
            seed: None,
        }
    }

    fn sample_prior(&self, rng: &mut SimRng) -> ParamVector {
        ParamVector::scalar(rng.random_range(self.prior_lo..self.prior_hi))
    }

    fn sample_data(&self, theta: &ParamVector, rng: &mut SimRng) -> Result<Dataset> {
        let dist = Self::sampler(theta)?;
        Ok(Dataset::Scalar((0..self.n_obs).map(|_| open_unit(dist.sample(rng))).collect()))
    }

    fn sample_posterior(&self, data: &Dataset, count: usize, rng: &mut SimRng) -> Result<Vec<ParamVector>> {
        let w = self.posterior_grid(data)?;
        let cum: Vec<f64> = w
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        Ok((0..count)
            .map(|_| ParamVector::scalar(self.grid[categorical_inverse_cdf(&cum, rng.random::<f64>())]))
            .collect())
    }

    fn log_joint(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        let t = theta.first()?;
        if t < self.prior_lo || t > self.prior_hi {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.log_likelihood(t, data)? - (self.prior_hi - self.prior_lo).ln())
    }

    fn simulate_statistics(
        &self,
        theta: &ParamVector,
        stats: &[TestStatistic],
        n: usize,
        rng: &mut SimRng,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let dist = Self::sampler(theta)?;
        let sorted_path = stats.iter().all(TestStatistic::is_order_invariant);
        let mut buf = vec![0.0; self.n_obs];
        out.reserve(n * stats.len());
        for _ in 0..n {
            for y in buf.iter_mut() {
                *y = open_unit(dist.sample(rng));
            }
            if sorted_path {
                buf.sort_unstable_by(f64::total_cmp);
                for s in stats {
                    out.push(s.orient(s.eval_sorted(&buf)?));
                }
            } else {
                let data = Dataset::Scalar(buf.clone());
                for s in stats {
                    out.push(s.oriented(&data)?);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_prior_predictive, sample_quantile_stat};
    use crate::seed::SeedSpec;

    #[test]
    fn rejects_nonpositive_support() {
        assert!(make_beta_model(0.0, 3.0, 512).is_err());
        assert!(make_beta_model(-1.0, 3.0, 512).is_err());
        assert!(make_beta_model(2.0, 1.0, 512).is_err());
    }

    #[test]
    fn two_point_grid_with_equal_likelihood_splits_evenly() {
        // ln(y(1-y)) = -ln 6 equalizes the likelihood at θ = 1 and θ = 2
        let y = (1.0 - (1.0f64 - 4.0 / 6.0).sqrt()) / 2.0;
        let m = BetaSymmetricModel::new(1.0, 2.0, 2, 1).unwrap();
        let data = Dataset::scalar(vec![y]).unwrap();
        let w = m.posterior_grid(&data).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12, "{w:?}");
        let n = 20_000;
        let draws = m.sample_posterior(&data, n, &mut SeedSpec::new(5).rng()).unwrap();
        assert_eq!(draws.len(), n);
        let frac = draws.iter().filter(|p| p.0[0] == 1.0).count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "frac {frac}");
    }

    #[test]
    fn grid_mode_matches_direct_mle() {
        let m = make_beta_model(0.5, 4.0, 4096).unwrap();
        let mut rng = SeedSpec::new(1).rng();
        let truth = Beta::new(1.0, 1.5).unwrap();
        let data = Dataset::scalar((0..100).map(|_| truth.sample(&mut rng)).collect()).unwrap();
        // oracle: golden-section maximization of the log-likelihood
        let ll = |t: f64| m.log_likelihood(t, &data).unwrap();
        let (mut a, mut b) = (0.5f64, 4.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if ll(c) > ll(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let mle = (a + b) / 2.0;
        let w = m.posterior_grid(&data).unwrap();
        let (imax, _) = w.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap();
        let step = 3.5 / 4095.0;
        assert!((m.grid()[imax] - mle).abs() <= step, "mode {} mle {mle}", m.grid()[imax]);
    }

    #[test]
    fn grid_refinement_stabilizes_posterior_mean() {
        let mut rng = SeedSpec::new(2).rng();
        let truth = Beta::new(1.0, 1.5).unwrap();
        let data = Dataset::scalar((0..100).map(|_| truth.sample(&mut rng)).collect()).unwrap();
        let mean = |g: usize| {
            let m = make_beta_model(0.5, 4.0, g).unwrap();
            let w = m.posterior_grid(&data).unwrap();
            m.grid().iter().zip(&w).map(|(t, w)| t * w).sum::<f64>()
        };
        let (a, b) = (mean(512), mean(4096));
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn prior_predictive_mean_and_determinism() {
        let m = make_beta_model(0.5, 4.0, 256).unwrap();
        let pairs = sample_prior_predictive(&m, 1000, SeedSpec::new(9)).unwrap();
        let thetas: Vec<f64> = pairs.iter().map(|(t, _)| t.0[0]).collect();
        let mean = thetas.iter().sum::<f64>() / 1000.0;
        let se = (3.5f64 * 3.5 / 12.0 / 1000.0).sqrt();
        assert!((mean - 2.25).abs() < 3.0 * se, "mean {mean}");
        assert!(pairs.iter().all(|(_, y)| y.len() == 100));
        let again = sample_prior_predictive(&m, 1000, SeedSpec::new(9)).unwrap();
        assert_eq!(pairs, again);
    }

    #[test]
    fn fast_statistics_match_generic_path() {
        let m = make_beta_model(0.5, 4.0, 256).unwrap();
        let stats = vec![sample_quantile_stat(0.05).unwrap(), sample_quantile_stat(0.95).unwrap()];
        let theta = ParamVector::scalar(1.3);
        let mut fast = Vec::new();
        m.simulate_statistics(&theta, &stats, 50, &mut SeedSpec::new(3).rng(), &mut fast).unwrap();
        let mut rng = SeedSpec::new(3).rng();
        let mut slow = Vec::new();
        for _ in 0..50 {
            let y = m.sample_data(&theta, &mut rng).unwrap();
            for s in &stats {
                slow.push(s.oriented(&y).unwrap());
            }
        }
        assert_eq!(fast, slow);
    }
}

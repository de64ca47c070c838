use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, GenerativeModel, ModelDescriptor, ModelFamily, ParamVector, StatisticKind, TestStatistic};
use crate::error::{invalid, Error, Result};
use crate::seed::SimRng;

/// Conjugate linear regression: `y | β ~ N(Xβ, σ² I)`, `β ~ N(0, Σ)` where `Σ`
/// is the identity except `Σ₁₂ = Σ₂₁ = ρ`.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    x: Arc<DMatrix<f64>>,
    sigma2: f64,
    rho: f64,
    prior_cov: DMatrix<f64>,
    prior_factor: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    post_cov: DMatrix<f64>,
    post_factor: DMatrix<f64>,
}

/// Identity with `ρ` in the (1,2) and (2,1) entries.
pub fn prior_covariance(d: usize, rho: f64) -> DMatrix<f64> {
    let mut s = DMatrix::identity(d, d);
    if d >= 2 {
        s[(0, 1)] = rho;
        s[(1, 0)] = rho;
    }
    s
}

pub fn make_regression_model(x: Arc<DMatrix<f64>>, sigma2: f64, rho: f64) -> Result<RegressionModel> {
    RegressionModel::new(x, sigma2, rho)
}

fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

impl RegressionModel {
    pub fn new(x: Arc<DMatrix<f64>>, sigma2: f64, rho: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return invalid(format!("noise variance must be positive, got {sigma2}"));
        }
        let d = x.ncols();
        if d == 0 || x.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(Error::Singular(format!("prior correlation |rho| = {} makes the prior precision singular", rho.abs())));
        }
        let prior_cov = prior_covariance(d, rho);
        let prior_factor = cholesky_lower(&prior_cov, "prior covariance")?;
        let prior_precision = prior_cov
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Singular("prior covariance".into()))?;
        let precision = x.transpose() * x.as_ref() / sigma2 + &prior_precision;
        let post_cov = precision
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Singular("posterior precision".into()))?;
        let post_factor = cholesky_lower(&symmetrize(&post_cov), "posterior covariance")?;
        Ok(Self { x, sigma2, rho, prior_cov, prior_factor, prior_precision, post_cov, post_factor })
    }

    pub fn design(&self) -> &Arc<DMatrix<f64>> {
        &self.x
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    /// Posterior mean and covariance of `β` given the response `y`.
    pub fn posterior_moments(&self, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if y.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch { expected: self.x.nrows(), actual: y.len() });
        }
        let mean = &self.post_cov * (self.x.transpose() * y) / self.sigma2;
        Ok((mean, self.post_cov.clone()))
    }

    fn response<'a>(&self, data: &'a Dataset) -> Result<&'a DVector<f64>> {
        match data {
            Dataset::Regression { y, .. } => Ok(y),
            Dataset::Scalar(_) => invalid("regression model expects regression data"),
        }
    }

    fn beta(&self, theta: &ParamVector) -> Result<DVector<f64>> {
        if theta.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch { expected: self.x.ncols(), actual: theta.len() });
        }
        Ok(DVector::from_column_slice(theta.as_slice()))
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn standard_normals(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `S` with `S Sᵀ = m` for a symmetric positive semidefinite `m`, tolerant of
/// zero eigenvalues.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

impl GenerativeModel for RegressionModel {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            family: ModelFamily::ConjugateRegression,
            hyperparameters: serde_json::json!({
                "sigma2": self.sigma2,
                "rho": self.rho,
                "n": self.x.nrows(),
                "d": self.x.ncols(),
            }),
            seed: None,
        }
    }

    fn sample_prior(&self, rng: &mut SimRng) -> ParamVector {
        let b = &self.prior_factor * standard_normals(self.x.ncols(), rng);
        ParamVector(b.as_slice().to_vec())
    }

    fn sample_data(&self, theta: &ParamVector, rng: &mut SimRng) -> Result<Dataset> {
        let b = self.beta(theta)?;
        let noise = standard_normals(self.x.nrows(), rng) * self.sigma2.sqrt();
        let y = self.x.as_ref() * b + noise;
        Ok(Dataset::Regression { x: self.x.clone(), y })
    }

    fn sample_posterior(&self, data: &Dataset, count: usize, rng: &mut SimRng) -> Result<Vec<ParamVector>> {
        let (mean, _) = self.posterior_moments(self.response(data)?)?;
        Ok((0..count)
            .map(|_| {
                let b = &mean + &self.post_factor * standard_normals(mean.len(), rng);
                ParamVector(b.as_slice().to_vec())
            })
            .collect())
    }

    fn log_joint(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        let b = self.beta(theta)?;
        let y = self.response(data)?;
        let r = y - self.x.as_ref() * &b;
        let prior = -0.5 * (b.transpose() * &self.prior_precision * &b)[(0, 0)];
        Ok(prior - 0.5 * r.norm_squared() / self.sigma2)
    }

    /// Projection statistics `Cᵀy` are jointly Gaussian given `β`, with mean
    /// `CᵀXβ` and covariance `σ² CᵀC`; they are drawn directly from that law.
    fn simulate_statistics(
        &self,
        theta: &ParamVector,
        stats: &[TestStatistic],
        n: usize,
        rng: &mut SimRng,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let columns: Option<Vec<&Vec<f64>>> = stats
            .iter()
            .map(|s| match &s.kind {
                StatisticKind::Projection { column } if column.len() == self.x.nrows() => Some(column.as_ref()),
                _ => None,
            })
            .collect();
        let Some(columns) = columns else {
            // generic path
            out.reserve(n * stats.len());
            for _ in 0..n {
                let y = self.sample_data(theta, rng)?;
                for s in stats {
                    out.push(s.oriented(&y)?);
                }
            }
            return Ok(());
        };
        let k = columns.len();
        let c = DMatrix::from_fn(self.x.nrows(), k, |i, j| columns[j][i]);
        let mean = c.transpose() * (self.x.as_ref() * self.beta(theta)?);
        let factor = psd_factor(&(c.transpose() * &c * self.sigma2));
        out.reserve(n * k);
        for _ in 0..n {
            let t = &mean + &factor * standard_normals(k, rng);
            for (s, v) in stats.iter().zip(t.iter()) {
                out.push(s.orient(*v));
            }
        }
        Ok(())
    }
}

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Error, Result};

/// Direction in which a statistic signals misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// Exceedance means `T(y_rep) >= T(y)`.
    Upper,
    /// Exceedance means `T(y_rep) <= T(y)`; handled internally by negation.
    Lower,
}

pub type CustomFn = Arc<dyn Fn(&Dataset) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub enum StatisticKind {
    /// Nearest-rank order statistic: the `ceil(qN)`-th smallest value.
    SampleQuantile { q: f64 },
    /// Inner product of a fixed vector with the response.
    Projection { column: Arc<Vec<f64>> },
    Mean,
    Custom(CustomFn),
}

impl fmt::Debug for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticKind::SampleQuantile { q } => write!(f, "SampleQuantile({q})"),
            StatisticKind::Projection { column } => write!(f, "Projection(len={})", column.len()),
            StatisticKind::Mean => write!(f, "Mean"),
            StatisticKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A named real-valued function of a dataset with a tail convention.
#[derive(Debug, Clone)]
pub struct TestStatistic {
    pub name: String,
    pub kind: StatisticKind,
    pub tail: Tail,
}

impl TestStatistic {
    pub fn custom(
        name: impl Into<String>,
        tail: Tail,
        f: impl Fn(&Dataset) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), kind: StatisticKind::Custom(Arc::new(f)), tail }
    }

    pub fn mean(tail: Tail) -> Self {
        Self { name: "mean".into(), kind: StatisticKind::Mean, tail }
    }

    pub fn with_tail(mut self, tail: Tail) -> Self {
        self.tail = tail;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Raw statistic value.
    pub fn eval(&self, data: &Dataset) -> Result<f64> {
        let v = data.response();
        match &self.kind {
            StatisticKind::SampleQuantile { q } => {
                if v.is_empty() {
                    return Err(Error::EmptyData);
                }
                let mut buf = v.to_vec();
                let k = nearest_rank_index(*q, buf.len());
                let (_, nth, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
                Ok(*nth)
            }
            StatisticKind::Projection { column } => {
                if column.len() != v.len() {
                    return Err(Error::DimensionMismatch { expected: column.len(), actual: v.len() });
                }
                Ok(column.iter().zip(v).map(|(a, b)| a * b).sum())
            }
            StatisticKind::Mean => {
                if v.is_empty() {
                    return Err(Error::EmptyData);
                }
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
            StatisticKind::Custom(f) => f(data),
        }
    }

    /// Evaluates on an already sorted sample; falls back to [`eval`](Self::eval)
    /// for kinds that do not benefit from sorting.
    pub(crate) fn eval_sorted(&self, sorted: &[f64]) -> Result<f64> {
        match &self.kind {
            StatisticKind::SampleQuantile { q } => {
                if sorted.is_empty() {
                    return Err(Error::EmptyData);
                }
                Ok(sorted[nearest_rank_index(*q, sorted.len())])
            }
            StatisticKind::Mean => self.eval(&Dataset::Scalar(sorted.to_vec())),
            _ => invalid("eval_sorted is only defined for order-invariant statistics"),
        }
    }

    pub(crate) fn is_order_invariant(&self) -> bool {
        matches!(self.kind, StatisticKind::SampleQuantile { .. } | StatisticKind::Mean)
    }

    /// Maps a raw value onto the upper-tail scale used by all exceedance logic.
    #[inline]
    pub fn orient(&self, raw: f64) -> f64 {
        match self.tail {
            Tail::Upper => raw,
            Tail::Lower => -raw,
        }
    }

    pub fn oriented(&self, data: &Dataset) -> Result<f64> {
        self.eval(data).map(|v| self.orient(v))
    }
}

/// Zero-based index of the nearest-rank order statistic.
pub(crate) fn nearest_rank_index(q: f64, n: usize) -> usize {
    // guard against q*n landing a hair above an integer through rounding
    let rank = (q * n as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

/// Nearest-rank sample quantile statistic. Lower tail, matching the
/// beta-quantile experiment where small observed quantiles signal misfit.
pub fn sample_quantile_stat(q: f64) -> Result<TestStatistic> {
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("quantile level must lie in (0,1), got {q}"));
    }
    Ok(TestStatistic {
        name: format!("quantile_{q}"),
        kind: StatisticKind::SampleQuantile { q },
        tail: Tail::Lower,
    })
}

/// `T(y) = column . y`, upper tail.
pub fn projection_stat(column: Vec<f64>) -> Result<TestStatistic> {
    if column.iter().any(|c| !c.is_finite()) {
        return invalid("projection column must be finite");
    }
    Ok(TestStatistic {
        name: "projection".into(),
        kind: StatisticKind::Projection { column: Arc::new(column) },
        tail: Tail::Upper,
    })
}

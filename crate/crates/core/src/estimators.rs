//! Monte Carlo estimators of posterior predictive, sampled, joint and
//! sampled-joint p-values.
//!
//! All estimators share one simulation layout: `n_outer` draws of `θ` from the
//! posterior, each followed by `n_inner` replicated datasets from `p(y | θ)`.
//! Exceedance is `T(y_rep) >= T(y)` on the tail-normalized scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{observed_statistics, Dataset, GenerativeModel, ParamVector, TestStatistic};
use crate::seed::{SeedSpec, PHASE_POSTERIOR, PHASE_REPLICATE};
use crate::stats::sample_variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueKind {
    Posterior,
    Sampled,
    Joint,
    SampledJoint,
    Calibrated,
    Partial,
}

/// A Monte Carlo p-value with its standard error and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueEstimate {
    pub kind: PValueKind,
    pub value: f64,
    pub std_error: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: SeedSpec,
    /// Set when a density estimate fell below its floor during tail inversion.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unstable_tail: bool,
}

/// Exceedance counts from one nested simulation.
#[derive(Debug, Clone)]
pub struct ExceedanceTable {
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: SeedSpec,
    pub thetas: Vec<ParamVector>,
    /// `marginal[i][j]`: replications of outer draw `i` exceeding on statistic `j`.
    pub marginal: Vec<Vec<u32>>,
    /// `joint[i]`: replications of outer draw `i` exceeding on every statistic.
    pub joint: Vec<u32>,
}

impl ExceedanceTable {
    fn estimate(&self, kind: PValueKind, counts: impl Iterator<Item = u32>) -> PValueEstimate {
        let fractions: Vec<f64> = counts.map(|c| c as f64 / self.n_inner as f64).collect();
        let total: u64 = fractions.iter().map(|f| (f * self.n_inner as f64).round() as u64).sum();
        let n = (self.n_outer * self.n_inner) as f64;
        let value = total as f64 / n;
        let std_error = if self.n_outer >= 2 {
            (sample_variance(&fractions) / self.n_outer as f64).sqrt()
        } else {
            (value * (1.0 - value) / self.n_inner as f64).sqrt()
        };
        PValueEstimate {
            kind,
            value,
            std_error: std_error.min(0.5),
            n_outer: self.n_outer,
            n_inner: self.n_inner,
            seed: self.seed,
            unstable_tail: false,
        }
    }

    /// Posterior predictive p-value of statistic `j`.
    pub fn marginal_estimate(&self, j: usize) -> PValueEstimate {
        self.estimate(PValueKind::Posterior, self.marginal.iter().map(|row| row[j]))
    }

    pub fn joint_estimate(&self) -> PValueEstimate {
        self.estimate(PValueKind::Joint, self.joint.iter().copied())
    }

    /// Per-draw exceedance fractions of statistic `j`: one sampled p-value per
    /// posterior draw.
    pub fn sampled_values(&self, j: usize) -> Vec<f64> {
        self.marginal.iter().map(|row| row[j] as f64 / self.n_inner as f64).collect()
    }

    pub fn sampled_joint_values(&self) -> Vec<f64> {
        self.joint.iter().map(|&c| c as f64 / self.n_inner as f64).collect()
    }
}

/// Counts exceedances for the given parameter draws. Draw `i` replicates under
/// `seed.child(i)`.
pub fn exceedances_at(
    model: &dyn GenerativeModel,
    observed: &[f64],
    stats: &[TestStatistic],
    thetas: &[ParamVector],
    n_inner: usize,
    seed: SeedSpec,
) -> Result<(Vec<Vec<u32>>, Vec<u32>)> {
    let d = stats.len();
    let rows: Vec<(Vec<u32>, u32)> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut rng = seed.child(i as u64).rng();
            let mut sims = Vec::with_capacity(n_inner * d);
            model.simulate_statistics(theta, stats, n_inner, &mut rng, &mut sims)?;
            let mut marg = vec![0u32; d];
            let mut joint = 0u32;
            for row in sims.chunks_exact(d) {
                let mut all = true;
                for ((m, v), o) in marg.iter_mut().zip(row).zip(observed) {
                    if v >= o {
                        *m += 1;
                    } else {
                        all = false;
                    }
                }
                joint += all as u32;
            }
            Ok((marg, joint))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

/// Runs the nested posterior simulation shared by all estimators in this module.
pub fn simulate_exceedances(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stats: &[TestStatistic],
    n_outer: usize,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<ExceedanceTable> {
    if n_outer == 0 || n_inner == 0 {
        return invalid("n_outer and n_inner must be at least 1");
    }
    if stats.is_empty() {
        return invalid("at least one test statistic is required");
    }
    let observed = observed_statistics(stats, data)?;
    let thetas = model.sample_posterior(data, n_outer, &mut seed.child(PHASE_POSTERIOR).rng())?;
    let (marginal, joint) = exceedances_at(model, &observed, stats, &thetas, n_inner, seed.child(PHASE_REPLICATE))?;
    Ok(ExceedanceTable { n_outer, n_inner, seed, thetas, marginal, joint })
}

/// Posterior predictive p-value `P(T(y_rep) >= T(y) | y)`.
pub fn post_p(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stat: &TestStatistic,
    n_outer: usize,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    Ok(simulate_exceedances(model, data, std::slice::from_ref(stat), n_outer, n_inner, seed)?.marginal_estimate(0))
}

/// One realization of the sampled p-value: a single posterior draw, then
/// `n_inner` replications from the sampling distribution.
pub fn sampled_p(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stat: &TestStatistic,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    let table = simulate_exceedances(model, data, std::slice::from_ref(stat), 1, n_inner, seed)?;
    Ok(PValueEstimate { kind: PValueKind::Sampled, ..table.marginal_estimate(0) })
}

/// Joint posterior predictive p-value: every statistic exceeds simultaneously.
pub fn joint_p(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stats: &[TestStatistic],
    n_outer: usize,
    n_inner: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    Ok(simulate_exceedances(model, data, stats, n_outer, n_inner, seed)?.joint_estimate())
}

/// Sampled joint p-value at a single posterior draw.
pub fn sampled_joint_p(
    model: &dyn GenerativeModel,
    data: &Dataset,
    stats: &[TestStatistic],
    n_inner: usize,
    seed: SeedSpec,
) -> Result<PValueEstimate> {
    let table = simulate_exceedances(model, data, stats, 1, n_inner, seed)?;
    Ok(PValueEstimate { kind: PValueKind::SampledJoint, ..table.joint_estimate() })
}

/// `φ(4 (post_p - δ))` with `φ(x) = x² / (1 + x²)`: a lower bound on
/// `P(sampled-p > δ)`.
pub fn paley_zygmund_lower(post_p_value: f64, delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&post_p_value) || delta < 0.0 {
        return invalid("need 0 <= delta and post_p in [0,1]");
    }
    if delta >= post_p_value {
        return invalid(format!("delta ({delta}) must be below the posterior predictive p-value ({post_p_value})"));
    }
    let x = 4.0 * (post_p_value - delta);
    Ok(x * x / (1.0 + x * x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_beta_model, sample_quantile_stat, NormalMeanModel, Tail};
    use crate::seed::SimRng;
    use crate::model::{ModelDescriptor, ModelFamily};

    /// Model whose sampling distribution is a point mass.
    struct Constant;

    impl GenerativeModel for Constant {
        fn descriptor(&self) -> ModelDescriptor {
            ModelDescriptor { family: ModelFamily::NormalMean, hyperparameters: serde_json::Value::Null, seed: None }
        }
        fn sample_prior(&self, _: &mut SimRng) -> ParamVector {
            ParamVector::scalar(0.0)
        }
        fn sample_data(&self, _: &ParamVector, _: &mut SimRng) -> Result<Dataset> {
            Ok(Dataset::Scalar(vec![0.5; 3]))
        }
        fn sample_posterior(&self, _: &Dataset, count: usize, _: &mut SimRng) -> Result<Vec<ParamVector>> {
            Ok(vec![ParamVector::scalar(0.0); count])
        }
    }

    #[test]
    fn normal_toy_at_zero_is_half() {
        let m = NormalMeanModel::new(0.0, 1.0, 1.0, 1).unwrap();
        let y = Dataset::scalar(vec![0.0]).unwrap();
        let stat = TestStatistic::mean(Tail::Upper);
        let p = post_p(&m, &y, &stat, 400, 50, SeedSpec::new(1)).unwrap();
        assert!((p.value - 0.5).abs() < 3.0 * p.std_error, "{p:?}");
        assert_eq!(p.kind, PValueKind::Posterior);
    }

    #[test]
    fn ties_give_p_one() {
        let y = Dataset::Scalar(vec![0.5; 3]);
        let stat = TestStatistic::mean(Tail::Upper);
        assert_eq!(post_p(&Constant, &y, &stat, 5, 5, SeedSpec::new(0)).unwrap().value, 1.0);
        let lower = stat.clone().with_tail(Tail::Lower);
        assert_eq!(joint_p(&Constant, &y, &[stat, lower], 5, 5, SeedSpec::new(0)).unwrap().value, 1.0);
    }

    #[test]
    fn joint_with_one_statistic_equals_post_p() {
        let m = make_beta_model(0.5, 4.0, 512).unwrap();
        let y = m.sample_data(&ParamVector::scalar(1.0), &mut SeedSpec::new(3).rng()).unwrap();
        let q = sample_quantile_stat(0.05).unwrap();
        let a = post_p(&m, &y, &q, 50, 20, SeedSpec::new(4)).unwrap();
        let b = joint_p(&m, &y, std::slice::from_ref(&q), 50, 20, SeedSpec::new(4)).unwrap();
        assert_eq!(a.value, b.value);
        // duplicated statistic: redundant conjunction
        let c = joint_p(&m, &y, &[q.clone(), q], 50, 20, SeedSpec::new(4)).unwrap();
        assert_eq!(a.value, c.value);
    }

    #[test]
    fn values_are_count_ratios_and_nested_sets_shrink() {
        let m = make_beta_model(0.5, 4.0, 512).unwrap();
        let y = m.sample_data(&ParamVector::scalar(0.8), &mut SeedSpec::new(5).rng()).unwrap();
        let stats = vec![
            sample_quantile_stat(0.05).unwrap(),
            sample_quantile_stat(0.5).unwrap(),
            sample_quantile_stat(0.95).unwrap(),
        ];
        let t = simulate_exceedances(&m, &y, &stats, 30, 17, SeedSpec::new(6)).unwrap();
        let j3 = t.joint_estimate().value;
        let t2 = simulate_exceedances(&m, &y, &stats[..2], 30, 17, SeedSpec::new(6)).unwrap();
        let j2 = t2.joint_estimate().value;
        assert!(j3 <= j2);
        let total = (30 * 17) as f64;
        assert_eq!((j3 * total).round() / total, j3);
        for row in 0..30 {
            assert!(t.joint[row] <= t2.joint[row]);
        }
    }

    #[test]
    fn sampled_kinds_and_sizes() {
        let m = NormalMeanModel::new(0.0, 1.0, 1.0, 5).unwrap();
        let y = Dataset::scalar(vec![0.1, -0.3, 0.2, 0.9, 0.0]).unwrap();
        let stat = TestStatistic::mean(Tail::Upper);
        let s = sampled_p(&m, &y, &stat, 200, SeedSpec::new(1)).unwrap();
        assert_eq!((s.kind, s.n_outer, s.n_inner), (PValueKind::Sampled, 1, 200));
        let sj = sampled_joint_p(&m, &y, &[stat.clone(), stat], 200, SeedSpec::new(1)).unwrap();
        assert_eq!(sj.kind, PValueKind::SampledJoint);
        assert_eq!(sj.value, s.value);
    }

    #[test]
    fn paley_zygmund_values() {
        assert!((paley_zygmund_lower(0.5, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((paley_zygmund_lower(1.0, 0.0).unwrap() - 16.0 / 17.0).abs() < 1e-15);
        assert!(paley_zygmund_lower(0.3, 0.3 - 1e-9).unwrap() < 1e-15);
        assert!(paley_zygmund_lower(0.3, 0.3).is_err());
        assert!(paley_zygmund_lower(0.3, 0.5).is_err());
    }

    #[test]
    fn estimate_json_shape() {
        let e = PValueEstimate {
            kind: PValueKind::SampledJoint,
            value: 0.25,
            std_error: 0.01,
            n_outer: 1,
            n_inner: 100,
            seed: SeedSpec::with_stream(3, 4),
            unstable_tail: false,
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"kind":"sampled_joint","value":0.25,"std_error":0.01,"n_outer":1,"n_inner":100,"seed":{"master":3,"stream":4}}"#
        );
    }
}

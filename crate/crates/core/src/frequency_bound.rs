//! Estimation of the CDF of conditional joint exceedance probabilities and the
//! frequency bound it implies for a joint p-value.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dominance::count_dominating;
use crate::ecdf::{CdfLike, EmpiricalCdf};
use crate::error::{invalid, Result};
use crate::model::{GenerativeModel, TestStatistic};
use crate::seed::SeedSpec;

/// Width of the fine-step window above `alpha`.
const FINE_WINDOW: f64 = 0.05;
/// Step used beyond the fine window.
const COARSE_STEP: f64 = 1e-3;
/// Points per decade of the geometric grid of offsets above `alpha`.
const GEOMETRIC_PER_DECADE: usize = 200;

/// Conditional joint exceedance estimates `p̂⁽ⁿ,ˡ⁾`, one row per prior draw.
///
/// For prior draw `n`, `m_sampling` datasets are simulated; `l_estimate` of them
/// are chosen at random, and for each the fraction of all `m_sampling`
/// replications whose statistic vector weakly dominates it is recorded.
pub fn algorithm1_pvalues(
    model: &dyn GenerativeModel,
    stats: &[TestStatistic],
    n_prior: usize,
    m_sampling: usize,
    l_estimate: usize,
    seed: SeedSpec,
) -> Result<Vec<Vec<f64>>> {
    if n_prior == 0 || m_sampling == 0 || l_estimate == 0 {
        return invalid("n_prior, m_sampling and l_estimate must be at least 1");
    }
    if l_estimate > m_sampling {
        return invalid(format!("l_estimate ({l_estimate}) exceeds m_sampling ({m_sampling})"));
    }
    if stats.is_empty() {
        return invalid("at least one test statistic is required");
    }
    let d = stats.len();
    (0..n_prior)
        .into_par_iter()
        .map(|n| {
            let mut rng = seed.child(n as u64).rng();
            let theta = model.sample_prior(&mut rng);
            let mut pool = Vec::with_capacity(m_sampling * d);
            model.simulate_statistics(&theta, stats, m_sampling, &mut rng, &mut pool)?;
            let mut picks = index::sample(&mut rng, m_sampling, l_estimate).into_vec();
            picks.sort_unstable();
            let mut queries = Vec::with_capacity(l_estimate * d);
            for &i in &picks {
                queries.extend_from_slice(&pool[i * d..(i + 1) * d]);
            }
            let counts = count_dominating(&pool, &queries, d);
            Ok(counts.into_iter().map(|c| c as f64 / m_sampling as f64).collect())
        })
        .collect()
}

/// `F̂`: the average of the per-draw ECDFs of [`algorithm1_pvalues`].
pub fn algorithm1_cdf(
    model: &dyn GenerativeModel,
    stats: &[TestStatistic],
    n_prior: usize,
    m_sampling: usize,
    l_estimate: usize,
    seed: SeedSpec,
) -> Result<EmpiricalCdf> {
    let rows = algorithm1_pvalues(model, stats, n_prior, m_sampling, l_estimate, seed)?;
    // every row has l_estimate points, so the average is the pooled ECDF
    EmpiricalCdf::from_samples(&rows.concat())
}

/// Exact `∫₀ˢ F(t) dt` of a step function.
pub fn ecdf_integral(f: &EmpiricalCdf, s: f64) -> Result<f64> {
    f.integral(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub alpha: f64,
    pub bound: f64,
    pub s_star: f64,
    /// `(s, ∫₀ˢF / (s − α))` at every evaluated grid point, ascending in `s`.
    pub objective_curve: Vec<(f64, f64)>,
}

impl BoundResult {
    pub fn write_curve_csv<W: Write>(&self, w: W, preamble: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(p) = preamble {
            writeln!(w, "# {p}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["s", "objective"])?;
        for (s, o) in &self.objective_curve {
            csv.write_record([s.to_string(), o.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn bound_grid(alpha: f64, grid_step: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    // geometric offsets resolve optima close to a small alpha
    let lowest = if alpha > 0.0 { (alpha * 1e-2).min(grid_step) } else { grid_step * 1e-3 };
    let decades = (FINE_WINDOW / lowest).log10();
    let n_geo = (decades * GEOMETRIC_PER_DECADE as f64).ceil() as usize;
    for k in 0..n_geo {
        let s = alpha + lowest * 10f64.powf(k as f64 / GEOMETRIC_PER_DECADE as f64);
        if s < 1.0 {
            grid.push(s);
        }
    }
    let fine_end = (alpha + FINE_WINDOW).min(1.0);
    let mut k = 1usize;
    loop {
        let s = alpha + k as f64 * grid_step;
        if s > fine_end - 1e-12 {
            break;
        }
        grid.push(s);
        k += 1;
    }
    let coarse = COARSE_STEP.max(grid_step);
    let mut s = fine_end;
    while s < 1.0 - 1e-12 {
        grid.push(s);
        s += coarse;
    }
    grid.push(1.0);
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Minimizes `∫₀ˢ F / (s − α)` over `s ∈ (α, 1]`.
///
/// The grid has steps of `grid_step` within 0.05 of `alpha`, steps of
/// `max(grid_step, 1e-3)` beyond, and geometrically spaced offsets from
/// `alpha` (200 per decade) up to the end of the fine window. The bound is clamped to `[0, 1]`.
pub fn theorem1_bound<F: CdfLike + ?Sized>(f: &F, alpha: f64, grid_step: f64) -> Result<BoundResult> {
    if !(0.0..1.0).contains(&alpha) {
        return invalid(format!("alpha must lie in [0, 1), got {alpha}"));
    }
    if !(grid_step > 0.0 && grid_step <= 0.01) {
        return invalid(format!("grid_step must lie in (0, 0.01], got {grid_step}"));
    }
    let objective_curve: Vec<(f64, f64)> = bound_grid(alpha, grid_step)
        .into_iter()
        .map(|s| (s, f.integral_to(s) / (s - alpha)))
        .collect();
    let (s_star, best) = objective_curve
        .iter()
        .copied()
        .fold((1.0, f64::INFINITY), |acc, (s, o)| if o < acc.1 { (s, o) } else { acc });
    Ok(BoundResult { alpha, bound: best.clamp(0.0, 1.0), s_star, objective_curve })
}

/// `min(2α, 1)`: the frequency bound of a single posterior predictive p-value.
pub fn meng_bound(alpha: f64) -> f64 {
    (2.0 * alpha).clamp(0.0, 1.0)
}

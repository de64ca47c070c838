//! Kendall functions of copulas and the frequency bounds they imply.
//!
//! The Kendall function of a copula `C` is the CDF of `C(U)` for `U ~ C`. Under
//! independence it has a closed form; for the equicorrelated Gaussian copula it
//! is estimated from samples.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dominance::count_dominating;
use crate::ecdf::{CdfLike, EmpiricalCdf};
use crate::error::{invalid, Error, Result};
use crate::frequency_bound::{theorem1_bound, BoundResult};
use crate::model::psd_factor;
use crate::seed::{SeedSpec, PHASE_AUX, PHASE_REPLICATE};

const SAMPLE_BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaKind {
    Independence,
    GaussianEquicorrelated,
}

/// A copula family member: dimension `d` and, for the Gaussian copula, the
/// negative-dependence level `v` (pairwise correlation `−v/(d−1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub kind: CopulaKind,
    pub d: usize,
    #[serde(default)]
    pub v: f64,
}

impl CopulaSpec {
    pub fn independence(d: usize) -> Result<Self> {
        Self { kind: CopulaKind::Independence, d, v: 0.0 }.validated()
    }

    pub fn gaussian(d: usize, v: f64) -> Result<Self> {
        Self { kind: CopulaKind::GaussianEquicorrelated, d, v }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.d == 0 {
            return invalid("copula dimension must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.v) {
            return invalid(format!("negative-dependence level v must lie in [0, 1], got {}", self.v));
        }
        Ok(self)
    }

    fn pairwise_correlation(&self) -> f64 {
        match self.kind {
            CopulaKind::Independence => 0.0,
            CopulaKind::GaussianEquicorrelated if self.d >= 2 => -self.v / (self.d - 1) as f64,
            CopulaKind::GaussianEquicorrelated => 0.0,
        }
    }
}

/// Ones on the diagonal, `−v/(d−1)` elsewhere.
pub fn gaussian_copula_correlation(d: usize, v: f64) -> Result<DMatrix<f64>> {
    if d < 2 {
        return invalid("the equicorrelated Gaussian copula needs d >= 2");
    }
    if !(0.0..=1.0).contains(&v) {
        return invalid(format!("v must lie in [0, 1] for a positive semidefinite correlation, got {v}"));
    }
    let r = -v / (d - 1) as f64;
    Ok(DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { r }))
}

/// Row-major uniform vectors drawn from a copula.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaSample {
    pub d: usize,
    pub values: Vec<f64>,
}

impl CopulaSample {
    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `n` draws from the copula; block `b` of 8192 rows uses `seed.child(b)`.
pub fn sample_gaussian_copula(spec: &CopulaSpec, n: usize, seed: SeedSpec) -> Result<CopulaSample> {
    let spec = spec.validated()?;
    if n == 0 {
        return invalid("sample size must be at least 1");
    }
    let d = spec.d;
    let factor = match spec.kind {
        CopulaKind::GaussianEquicorrelated if d >= 2 => Some(psd_factor(&gaussian_copula_correlation(d, spec.v)?)),
        _ => None,
    };
    let phi = std_normal();
    let n_blocks = n.div_ceil(SAMPLE_BLOCK);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let rows = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
            let mut rng = seed.child(b as u64).rng();
            let mut out = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                match &factor {
                    Some(f) => {
                        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let z = f * g;
                        out.extend(z.iter().map(|&x| phi.cdf(x)));
                    }
                    None => out.extend((0..d).map(|_| rng.random::<f64>())),
                }
            }
            out
        })
        .collect();
    Ok(CopulaSample { d, values: blocks.concat() })
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `P(Z₁ ≤ h, Z₂ ≤ k)` for standard normals with correlation `r`, by
/// quadrature of `∂Φ₂/∂r` in `r = sin θ`.
pub fn bivariate_normal_cdf(h: f64, k: f64, r: f64) -> f64 {
    let phi = std_normal();
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return phi.cdf(k);
    }
    if k == f64::INFINITY {
        return phi.cdf(h);
    }
    let top = r.clamp(-1.0, 1.0).asin();
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        let c2 = c * c;
        let num = h * h + k * k - 2.0 * h * k * s;
        if c2 <= 0.0 {
            return if num <= 0.0 { 1.0 } else { 0.0 };
        }
        (-num / (2.0 * c2)).exp()
    };
    let integral = if top == 0.0 { 0.0 } else { adaptive_simpson(&f, 0.0, top, 1e-14) };
    (phi.cdf(h) * phi.cdf(k) + integral / (2.0 * PI)).clamp(0.0, 1.0)
}

fn exact_cdf(u: &[f64], spec: &CopulaSpec) -> Option<f64> {
    if u.iter().any(|&x| x <= 0.0) {
        return Some(0.0);
    }
    let free: Vec<f64> = u.iter().copied().filter(|&x| x < 1.0).collect();
    match (spec.kind, free.len()) {
        (_, 0) => Some(1.0),
        (_, 1) => Some(free[0]),
        (CopulaKind::Independence, _) => Some(free.iter().product()),
        (CopulaKind::GaussianEquicorrelated, 2) => {
            let phi = std_normal();
            Some(bivariate_normal_cdf(phi.inverse_cdf(free[0]), phi.inverse_cdf(free[1]), spec.pairwise_correlation()))
        }
        _ => None,
    }
}

/// Copula CDF at each row of `points`. Exact for independence and for the
/// Gaussian copula with at most two free coordinates; otherwise the fraction of
/// a common pool of `n_mc` copula draws lying below the point.
pub fn gaussian_copula_cdf_batch(points: &CopulaSample, spec: &CopulaSpec, n_mc: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    let spec = spec.validated()?;
    if points.d != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, actual: points.d });
    }
    if points.values.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return invalid("copula arguments must lie in [0, 1]");
    }
    let mut out: Vec<Option<f64>> = points.rows().map(|u| exact_cdf(u, &spec)).collect();
    let pending: Vec<usize> = (0..out.len()).filter(|&i| out[i].is_none()).collect();
    if !pending.is_empty() {
        if n_mc == 0 {
            return invalid("n_mc must be at least 1");
        }
        let pool = sample_gaussian_copula(&spec, n_mc, seed)?;
        let neg_pool: Vec<f64> = pool.values.iter().map(|x| -x).collect();
        let neg_queries: Vec<f64> = pending.iter().flat_map(|&i| points.row(i).iter().map(|x| -x)).collect();
        let counts = count_dominating(&neg_pool, &neg_queries, spec.d);
        for (&i, c) in pending.iter().zip(counts) {
            out[i] = Some(c as f64 / n_mc as f64);
        }
    }
    Ok(out.into_iter().map(|x| x.expect("filled")).collect())
}

pub fn gaussian_copula_cdf(u: &[f64], spec: &CopulaSpec, n_mc: usize, seed: SeedSpec) -> Result<f64> {
    let pts = CopulaSample { d: u.len(), values: u.to_vec() };
    Ok(gaussian_copula_cdf_batch(&pts, spec, n_mc, seed)?[0])
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("argument must lie in [0, 1], got {t}"));
    }
    Ok(())
}

/// `t · Σ_{i<d} ln(1/t)ⁱ / i!`: the Kendall function of the independence copula.
pub fn independence_kendall(t: f64, d: usize) -> Result<f64> {
    check_unit(t)?;
    if d == 0 {
        return invalid("dimension must be at least 1");
    }
    Ok(kendall_closed(t, d))
}

fn kendall_closed(t: f64, d: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let l = -t.ln();
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..d {
        term *= l / i as f64;
        sum += term;
    }
    (t * sum).min(1.0)
}

/// `∫₀ˢ` of the independence Kendall function.
pub fn independence_kendall_integral(s: f64, d: usize) -> Result<f64> {
    check_unit(s)?;
    if d == 0 {
        return invalid("dimension must be at least 1");
    }
    Ok(kendall_closed_integral(s, d))
}

fn kendall_closed_integral(s: f64, d: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    // J_i = ∫₀ˢ t ln(1/t)^i / i! dt = s²/2 · L^i/i! + J_{i−1}/2
    let l = -s.ln();
    let half_s2 = 0.5 * s * s;
    let mut term = 1.0;
    let mut j = half_s2;
    let mut total = j;
    for i in 1..d {
        term *= l / i as f64;
        j = half_s2 * term + 0.5 * j;
        total += j;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum KendallSource {
    ClosedForm,
    MonteCarlo { n_samples: usize, n_mc_cdf: usize },
}

/// A Kendall function: closed form under independence or an ECDF of sampled
/// copula values.
#[derive(Debug, Clone, PartialEq)]
pub struct KendallCurve {
    d: usize,
    source: KendallSource,
    ecdf: Option<EmpiricalCdf>,
}

impl KendallCurve {
    pub fn independence(d: usize) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be at least 1");
        }
        Ok(KendallCurve { d, source: KendallSource::ClosedForm, ecdf: None })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> &KendallSource {
        &self.source
    }

    /// The sampled ECDF; `None` for closed forms.
    pub fn ecdf(&self) -> Option<&EmpiricalCdf> {
        self.ecdf.as_ref()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.cdf(t)
    }

    /// Binomial standard error of an estimated curve; zero for closed forms.
    pub fn std_error(&self, t: f64) -> f64 {
        match (&self.source, &self.ecdf) {
            (KendallSource::MonteCarlo { n_samples, .. }, Some(_)) => {
                let f = self.cdf(t);
                (f * (1.0 - f) / *n_samples as f64).sqrt()
            }
            _ => 0.0,
        }
    }
}

impl CdfLike for KendallCurve {
    fn cdf(&self, t: f64) -> f64 {
        match &self.ecdf {
            Some(e) => e.eval(t),
            None => kendall_closed(t.clamp(0.0, 1.0), self.d),
        }
    }

    fn integral_to(&self, s: f64) -> f64 {
        match &self.ecdf {
            Some(e) => e.integral_to(s),
            None => kendall_closed_integral(s.clamp(0.0, 1.0), self.d),
        }
    }
}

/// ECDF of `C(U)` over `n_samples` copula draws `U`, with `C` evaluated against
/// an independent pool of `n_mc_cdf` draws where no exact form is available.
pub fn empirical_kendall(spec: &CopulaSpec, n_samples: usize, n_mc_cdf: usize, seed: SeedSpec) -> Result<KendallCurve> {
    let spec = spec.validated()?;
    let samples = sample_gaussian_copula(&spec, n_samples, seed.child(PHASE_REPLICATE))?;
    let values = gaussian_copula_cdf_batch(&samples, &spec, n_mc_cdf, seed.child(PHASE_AUX))?;
    Ok(KendallCurve {
        d: spec.d,
        source: KendallSource::MonteCarlo { n_samples, n_mc_cdf },
        ecdf: Some(EmpiricalCdf::from_samples(&values)?),
    })
}

/// Frequency bound with `α = p^d`, the worst-case joint nominal value of `d`
/// statistics that each have p-value `p`.
pub fn copula_bound_curve(curve: &KendallCurve, p: f64, d: usize, grid_step: f64) -> Result<BoundResult> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("p must lie in (0, 1), got {p}"));
    }
    if d != curve.d {
        return Err(Error::DimensionMismatch { expected: curve.d, actual: d });
    }
    theorem1_bound(curve, p.powi(d as i32), grid_step)
}

/// True iff `a(t) ≥ b(t)` at every grid point (`a` precedes `b` in the PKD order).
pub fn pkd_dominates(a: &KendallCurve, b: &KendallCurve, grid: &[f64]) -> Result<bool> {
    pkd_dominates_with_slack(a, b, grid, 0.0)
}

/// As [`pkd_dominates`], allowing `a` to fall short by `k_se` combined standard errors.
pub fn pkd_dominates_with_slack(a: &KendallCurve, b: &KendallCurve, grid: &[f64], k_se: f64) -> Result<bool> {
    if a.d != b.d {
        return Err(Error::DimensionMismatch { expected: a.d, actual: b.d });
    }
    Ok(grid.iter().all(|&t| {
        let se = (a.std_error(t).powi(2) + b.std_error(t).powi(2)).sqrt();
        a.cdf(t) + k_se * se >= b.cdf(t)
    }))
}

/// `(1 − δ) / (C + 1 − δ)`: lower bound on the posterior probability that the
/// sampled joint p-value is at least `(1 − δ)` times its mean, when the
/// coefficient of variation is below `C`.
pub fn copula_pz(delta: f64, c: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("C must be positive and finite, got {c}"));
    }
    Ok((1.0 - delta) / (c + 1.0 - delta))
}

/// One point of a bound-versus-dimension curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurveRow {
    pub p: f64,
    pub d: usize,
    pub v: f64,
    pub alpha: f64,
    pub bound: f64,
    pub s_star: f64,
}

/// Bounds for every `(v, d, p)` combination. Independence curves use the closed
/// form; Gaussian curves are estimated with `n_samples` draws and a CDF pool of
/// `n_mc_cdf`, seeded per `(v, d)` pair.
pub fn bound_curve_rows(
    kind: CopulaKind,
    ds: &[usize],
    ps: &[f64],
    vs: &[f64],
    n_samples: usize,
    n_mc_cdf: usize,
    grid_step: f64,
    seed: SeedSpec,
) -> Result<Vec<BoundCurveRow>> {
    let vs: Vec<f64> = match kind {
        CopulaKind::Independence => vec![0.0],
        CopulaKind::GaussianEquicorrelated => vs.to_vec(),
    };
    let mut rows = Vec::new();
    for (vi, &v) in vs.iter().enumerate() {
        for (di, &d) in ds.iter().enumerate() {
            let curve = match kind {
                CopulaKind::Independence => KendallCurve::independence(d)?,
                CopulaKind::GaussianEquicorrelated => {
                    let spec = CopulaSpec::gaussian(d, v)?;
                    let s = seed.child(vi as u64).child(di as u64);
                    empirical_kendall(&spec, n_samples, n_mc_cdf, s)?
                }
            };
            for &p in ps {
                let r = copula_bound_curve(&curve, p, d, grid_step)?;
                rows.push(BoundCurveRow { p, d, v, alpha: r.alpha, bound: r.bound, s_star: r.s_star });
            }
        }
    }
    Ok(rows)
}

pub fn write_bound_rows_csv<W: Write>(rows: &[BoundCurveRow], w: W, preamble: Option<&str>) -> Result<()> {
    let mut w = w;
    if let Some(p) = preamble {
        writeln!(w, "# {p}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

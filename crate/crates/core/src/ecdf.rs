//! Weighted empirical distribution functions on `[0, 1]`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A CDF on `[0, 1]` that can be integrated exactly from 0.
pub trait CdfLike {
    fn cdf(&self, t: f64) -> f64;

    /// `∫₀ˢ F(t) dt` for `s` in `[0, 1]`.
    fn integral_to(&self, s: f64) -> f64;
}

/// The uniform CDF `F(t) = t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformCdf;

impl CdfLike for UniformCdf {
    fn cdf(&self, t: f64) -> f64 {
        t.clamp(0.0, 1.0)
    }

    fn integral_to(&self, s: f64) -> f64 {
        0.5 * s * s
    }
}

/// Right-continuous step function with weighted support points in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    support: Vec<f64>,
    cumulative: Vec<f64>,
    // running Σ w_i x_i, used for exact integration
    moment: Vec<f64>,
}

impl EmpiricalCdf {
    /// Equal-weight ECDF of `samples`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut v = samples.to_vec();
        check_unit(&v)?;
        v.sort_unstable_by(f64::total_cmp);
        let n = v.len() as f64;
        let mut support = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for x in v {
            if support.last() == Some(&x) {
                *counts.last_mut().unwrap() += 1;
            } else {
                support.push(x);
                counts.push(1);
            }
        }
        let mut cumulative = Vec::with_capacity(support.len());
        let mut moment = Vec::with_capacity(support.len());
        let (mut c, mut m) = (0usize, 0.0);
        for (x, k) in support.iter().zip(counts) {
            c += k;
            m += k as f64 * x / n;
            cumulative.push(c as f64 / n);
            moment.push(m);
        }
        Ok(Self { support, cumulative, moment })
    }

    /// ECDF with arbitrary positive weights, normalized to total mass 1.
    pub fn from_weighted(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyData);
        }
        if points.iter().any(|&(_, w)| !(w > 0.0) || !w.is_finite()) {
            return invalid("ECDF weights must be positive and finite");
        }
        let mut pts = points.to_vec();
        check_unit(&pts.iter().map(|p| p.0).collect::<Vec<_>>())?;
        pts.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let mut support: Vec<f64> = Vec::new();
        let mut mass: Vec<f64> = Vec::new();
        for (x, w) in pts {
            if support.last() == Some(&x) {
                *mass.last_mut().unwrap() += w;
            } else {
                support.push(x);
                mass.push(w);
            }
        }
        let (mut c, mut m) = (0.0, 0.0);
        let mut cumulative = Vec::with_capacity(support.len());
        let mut moment = Vec::with_capacity(support.len());
        for (x, w) in support.iter().zip(&mass) {
            c += w;
            m += w * x / total;
            cumulative.push(c / total);
            moment.push(m);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self { support, cumulative, moment })
    }

    /// Rebuilds an ECDF from its support and cumulative weights.
    pub fn from_parts(support: Vec<f64>, cumulative: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != cumulative.len() {
            return invalid("support and cumulative weights must be nonempty and aligned");
        }
        check_unit(&support)?;
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("ECDF support must be strictly increasing");
        }
        let mut prev = 0.0;
        let mut points = Vec::with_capacity(support.len());
        for (&x, &c) in support.iter().zip(&cumulative) {
            if c < prev {
                return invalid("cumulative weights must be nondecreasing");
            }
            if c > prev {
                points.push((x, c - prev));
            }
            prev = c;
        }
        if (prev - 1.0).abs() > 1e-9 {
            return invalid(format!("cumulative weights must end at 1, got {prev}"));
        }
        Self::from_weighted(&points)
    }

    /// Equal-weight mixture of several ECDFs.
    pub fn average(parts: &[EmpiricalCdf]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::EmptyData);
        }
        let k = parts.len() as f64;
        let mut points = Vec::new();
        for p in parts {
            let mut prev = 0.0;
            for (&x, &c) in p.support.iter().zip(&p.cumulative) {
                points.push((x, (c - prev) / k));
                prev = c;
            }
        }
        points.retain(|p| p.1 > 0.0);
        Self::from_weighted(&points)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Number of support points `<= t`.
    fn rank(&self, t: f64) -> usize {
        self.support.partition_point(|&x| x <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.rank(t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Exact `∫₀ˢ F(t) dt`.
    pub fn integral(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return invalid(format!("integration limit must lie in [0,1], got {s}"));
        }
        Ok(self.integral_to(s))
    }

    /// Smallest support point `x` with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < q);
        self.support[k.min(self.support.len() - 1)]
    }

    pub fn mean(&self) -> f64 {
        *self.moment.last().unwrap()
    }

    /// Two columns: `support,cumulative_weight`.
    pub fn write_csv<W: Write>(&self, w: W, preamble: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(p) = preamble {
            writeln!(w, "# {p}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["support", "cumulative_weight"])?;
        for (x, c) in self.support.iter().zip(&self.cumulative) {
            wtr.write_record([x.to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut support = Vec::new();
        let mut cumulative = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (x, c) = rec?;
            support.push(x);
            cumulative.push(c);
        }
        Self::from_parts(support, cumulative)
    }
}

impl CdfLike for EmpiricalCdf {
    fn cdf(&self, t: f64) -> f64 {
        self.eval(t)
    }

    fn integral_to(&self, s: f64) -> f64 {
        match self.rank(s) {
            0 => 0.0,
            k => self.cumulative[k - 1] * s - self.moment[k - 1],
        }
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => invalid(format!("ECDF support points must lie in [0,1], got {x}")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point_integration() {
        let f = EmpiricalCdf::from_samples(&[0.5]).unwrap();
        assert_eq!(f.integral(0.75).unwrap(), 0.25);
        assert_eq!(f.integral(0.0).unwrap(), 0.0);
        assert_eq!(f.integral(0.5).unwrap(), 0.0);
        assert!(f.integral(1.5).is_err());
        assert!(f.integral(-0.1).is_err());
    }

    #[test]
    fn tenth_grid_complement_identity() {
        let pts: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let f = EmpiricalCdf::from_samples(&pts).unwrap();
        // 1 - mean(points) = 0.45 by direct step integration
        assert!((f.integral(1.0).unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn right_continuity_and_quantile() {
        let f = EmpiricalCdf::from_samples(&[0.2, 0.2, 0.6, 0.9]).unwrap();
        assert_eq!(f.eval(0.19999), 0.0);
        assert_eq!(f.eval(0.2), 0.5);
        assert_eq!(f.eval(0.6), 0.75);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.quantile(0.5), 0.2);
        assert_eq!(f.quantile(0.51), 0.6);
        assert_eq!(f.support(), &[0.2, 0.6, 0.9]);
    }

    #[test]
    fn rejects_out_of_range_support() {
        assert!(EmpiricalCdf::from_samples(&[1.5]).is_err());
        assert!(EmpiricalCdf::from_samples(&[]).is_err());
        assert!(EmpiricalCdf::from_weighted(&[(0.5, 0.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let f = EmpiricalCdf::from_samples(&[0.1, 0.3, 0.3, 0.7]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, Some("test")).unwrap();
        let g = EmpiricalCdf::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f.support(), g.support());
        for (a, b) in f.cumulative().iter().zip(g.cumulative()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn integral_matches_riemann_oracle(v in proptest::collection::vec(0.0f64..=1.0, 1..50), s in 0.0f64..=1.0) {
            let f = EmpiricalCdf::from_samples(&v).unwrap();
            // oracle: direct definition ∫₀ˢ F = mean over points of max(0, s - x)
            let exact: f64 = v.iter().map(|&x| (s - x).max(0.0)).sum::<f64>() / v.len() as f64;
            prop_assert!((f.integral(s).unwrap() - exact).abs() < 1e-12);
            // ∫₀¹ (1 - F) equals the sample mean
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((1.0 - f.integral(1.0).unwrap() - mean).abs() < 1e-12);
            prop_assert!(f.cumulative().windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*f.cumulative().last().unwrap(), 1.0);
        }

        #[test]
        fn average_equals_pooled(a in proptest::collection::vec(0.0f64..=1.0, 5), b in proptest::collection::vec(0.0f64..=1.0, 5)) {
            let fa = EmpiricalCdf::from_samples(&a).unwrap();
            let fb = EmpiricalCdf::from_samples(&b).unwrap();
            let avg = EmpiricalCdf::average(&[fa, fb]).unwrap();
            let pooled = EmpiricalCdf::from_samples(&[a, b].concat()).unwrap();
            for t in [0.0, 0.1, 0.33, 0.5, 0.77, 1.0] {
                prop_assert!((avg.eval(t) - pooled.eval(t)).abs() < 1e-12);
                prop_assert!((avg.integral_to(t) - pooled.integral_to(t)).abs() < 1e-12);
            }
        }
    }
}

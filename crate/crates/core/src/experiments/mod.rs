//! End-to-end simulation studies and the shared analysis pipeline behind the
//! command-line front end.
//!
//! Every output file embeds the artifact version and a SHA-256 hash of the
//! canonical JSON configuration. Reports contain no timing information, so
//! reruns with the same configuration produce byte-identical files.

mod analysis;
mod beta;
mod check;
mod regression;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub use analysis::{analyze, DatasetAnalysis, Methods, MonteCarloSizes, SharedTables, StatisticResult};
pub use beta::{run_beta_experiment, BetaExperimentConfig, BetaOutcome, BetaReport, BetaSummary};
pub use check::{run_bound, run_check, BoundOutcome, CheckConfig, CheckOutcome, DataSource, StatDescriptor};
pub use regression::{
    covariance_terms, run_regression_experiment, RegressionExperimentConfig, RegressionOutcome, RegressionRecord,
    RegressionReport, RhoSummary,
};

pub const ARTIFACT: &str = "jointcheck";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance embedded in every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub artifact: String,
    pub version: String,
    pub config_sha256: String,
}

impl RunMeta {
    /// Hashes the canonical (compact, field-ordered) JSON form of `config`.
    pub fn for_config<T: Serialize>(config: &T) -> Result<Self> {
        let bytes = serde_json::to_vec(config)?;
        Ok(RunMeta {
            artifact: ARTIFACT.into(),
            version: VERSION.into(),
            config_sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Comment line for CSV outputs.
    pub fn preamble(&self) -> String {
        format!("{} {} config_sha256={}", self.artifact, self.version, self.config_sha256)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_writer(path: &Path, meta: &RunMeta) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}", meta.preamble())?;
    Ok(csv::Writer::from_writer(w))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Decimal text for CSV cells; infinities as `inf` / `-inf`.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// `log₁₀(value / (2·normalizer))`; NaN when the normalizer is not positive.
pub fn log_ratio(value: f64, normalizer: f64) -> f64 {
    if normalizer <= 0.0 {
        return f64::NAN;
    }
    (value / (2.0 * normalizer)).log10()
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

//! JSON and CSV report serialization.
//!
//! JSON output is deterministic: struct fields serialize in declaration
//! order, per-order scores keep ascending-order insertion, and floats use the
//! shortest representation that parses back to the identical `f64`.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::entropy::SpectrumRoute;
use crate::error::{FkeaError, Result};
use crate::modes::{ModeEntry, Ranking};

pub const DIVERSITY_SCHEMA: &str = "fkea.diversity/v1";
pub const MODES_SCHEMA: &str = "fkea.modes/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = FkeaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(FkeaError::input(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    User,
    /// Median pairwise distance over a seeded subsample; a convenience
    /// heuristic, not a tuned bandwidth.
    MedianHeuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub input: Option<String>,
    pub n: u64,
    pub d: usize,
    pub sigma: f64,
    pub sigma_source: SigmaSource,
    pub rff_dim: Option<usize>,
    pub r: Option<usize>,
    /// Seed that regenerates the Fourier basis.
    pub seed: Option<u64>,
    pub rng: Option<String>,
    pub basis_fingerprint: Option<String>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fkea,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInfo {
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub route: Option<SpectrumRoute>,
    pub matrix_dim: usize,
    pub support: usize,
    pub clamped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub schema: String,
    pub method: Method,
    pub provenance: Provenance,
    /// Score per entropy order, keyed by the order's canonical string.
    pub scores: IndexMap<String, f64>,
    /// Order-2 score from the Frobenius norm (no eigendecomposition).
    pub rke: f64,
    pub bound: Option<BoundInfo>,
    pub spectrum: Option<SpectrumInfo>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub schema: String,
    pub provenance: Provenance,
    pub ranking: Ranking,
    pub top_k: usize,
    pub modes: Vec<ModeEntry>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types always serialize");
    s.push('\n');
    s
}

fn from_json<'a, T: Deserialize<'a>>(text: &'a str, schema: &str, found: impl Fn(&T) -> &str) -> Result<T> {
    let v: T = serde_json::from_str(text).map_err(|e| {
        FkeaError::format(
            e.line() as u64,
            format!("invalid report JSON (line {}, column {}): {e}", e.line(), e.column()),
        )
    })?;
    if found(&v) != schema {
        return Err(FkeaError::format(0, format!("expected schema {schema:?}, found {:?}", found(&v))));
    }
    Ok(v)
}

impl DiversityReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, DIVERSITY_SCHEMA, |r: &Self| r.schema.as_str())
    }

    /// One row per entropy order.
    pub fn to_csv(&self) -> String {
        let method = match self.method {
            Method::Fkea => "fkea",
            Method::Exact => "exact",
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "alpha", "score"]).unwrap();
        for (alpha, score) in &self.scores {
            w.write_record([method, alpha, &score.to_string()]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

impl ModeReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, MODES_SCHEMA, |r: &Self| r.schema.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "rank", "sample_index", "score", "eigenvalue"])
            .unwrap();
        for m in &self.modes {
            for s in &m.samples {
                w.write_record([
                    m.mode.to_string(),
                    s.rank.to_string(),
                    s.index.to_string(),
                    s.score.to_string(),
                    m.eigenvalue.to_string(),
                ])
                .unwrap();
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Anything that can be written with [`write_report`].
pub trait Report {
    fn render(&self, format: ReportFormat) -> String;
}

impl Report for DiversityReport {
    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

impl Report for ModeReport {
    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

pub fn write_report(report: &impl Report, path: &Path, format: ReportFormat) -> Result<()> {
    std::fs::write(path, report.render(format)).map_err(|e| FkeaError::io(path, e))
}

//! Deterministic report emission: JSON trees and TSV tables, floats printed to six
//! significant digits.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::MetricEstimate;
use crate::error::Result;
use crate::simulation::{PlotPoint, RunFailure, SummaryRow};

pub const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub software: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub estimates: Vec<MetricEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<RunFailure>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Report {
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_hash: config_hash(config)?,
            estimates: Vec::new(),
            summary: Vec::new(),
            failures: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Round to `digits` significant digits.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v)
}

fn round_tree(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(|f| round_sig(f, SIGNIFICANT_DIGITS)) {
                *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_tree),
        Value::Object(o) => o.iter_mut().for_each(|(_, x)| round_tree(x)),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and rounded floats.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut tree = serde_json::to_value(value)?;
    round_tree(&mut tree);
    let mut s = serde_json::to_string_pretty(&tree)?;
    s.push('\n');
    Ok(s)
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| round_sig(v, SIGNIFICANT_DIGITS).to_string())
}

/// One row per estimate.
pub fn estimates_tsv(estimates: &[MetricEstimate]) -> String {
    let mut s = String::from("metric\tcontext\tvalue\n");
    for e in estimates {
        let _ = writeln!(s, "{}\t{}\t{}", e.name, e.context, num(e.value));
    }
    s
}

/// One row per sample size, setting and metric.
pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "n\tsetting\tmetric\truns\tmean\tsd\tsample_reference\tpopulation_reference\tnaive_reference\tbias\trmse\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.n,
            r.setting,
            r.metric,
            r.runs,
            num(Some(r.mean)),
            num(Some(r.sd)),
            num(r.mean_sample_reference),
            num(Some(r.mean_population_reference)),
            num(r.mean_naive_reference),
            num(Some(r.bias)),
            num(Some(r.rmse)),
        );
    }
    s
}

/// Mean and mean +/- 1 SD per panel.
pub fn plot_tsv(points: &[PlotPoint]) -> String {
    let mut s = String::from("n\tsetting\tmetric\tmean\tlower\tupper\n");
    for p in points {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.n,
            p.setting,
            p.metric,
            num(Some(p.mean)),
            num(Some(p.lower)),
            num(Some(p.upper))
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Tsv,
}

/// Write `report` to `path`.
pub fn emit_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Tsv if report.summary.is_empty() => estimates_tsv(&report.estimates),
        ReportFormat::Tsv => summary_tsv(&report.summary),
    };
    std::fs::write(path, text)?;
    Ok(())
}

//! Trial CSV ingestion/writing, prediction tables and fitted-model JSON.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, RiskPredictionSet, TrialDataset};
use crate::error::{Error, Result};
use crate::glm::IteModel;

/// Which CSV columns hold the outcome, the treatment indicator and the covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSchema {
    pub outcome: String,
    pub treatment: String,
    /// Empty: every other column, in file order.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub outcome_kind: OutcomeKind,
}

impl Default for TrialSchema {
    fn default() -> Self {
        TrialSchema {
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: Vec::new(),
            outcome_kind: OutcomeKind::Binary,
        }
    }
}

/// A loaded trial with the covariate names it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrial {
    pub data: TrialDataset,
    pub covariate_names: Vec<String>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_cell(record: &csv::StringRecord, row: usize, col: usize, name: &str) -> Result<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        row,
        column: name.to_string(),
        message: format!("cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: name.to_string(),
            message: format!("non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

/// Read a trial from CSV text. Rows are numbered from 1 (the first data line) in errors.
pub fn read_trial_csv<R: Read>(reader: R, schema: &TrialSchema) -> Result<LoadedTrial> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::InvalidData("empty file".into()));
    }
    let y_col = column(&headers, &schema.outcome)?;
    let a_col = column(&headers, &schema.treatment)?;
    let names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_col && *i != a_col)
            .map(|(_, h)| h.trim().to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    let x_cols = names.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;

    let (mut y, mut a, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        y.push(parse_cell(&rec, row, y_col, &schema.outcome)?);
        let av = parse_cell(&rec, row, a_col, &schema.treatment)?;
        if av != 0.0 && av != 1.0 {
            return Err(Error::Parse {
                row,
                column: schema.treatment.clone(),
                message: format!("treatment must be 0 or 1, got {av}"),
            });
        }
        a.push(av as u8);
        for (&c, name) in x_cols.iter().zip(&names) {
            x.push(parse_cell(&rec, row, c, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let x = Array2::from_shape_vec((y.len(), names.len()), x).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(LoadedTrial {
        data: TrialDataset::with_kind(y, a, x, schema.outcome_kind)?,
        covariate_names: names,
    })
}

/// Parse a trial from raw bytes.
pub fn parse_trial_csv(bytes: &[u8], schema: &TrialSchema) -> Result<LoadedTrial> {
    read_trial_csv(bytes, schema)
}

pub fn load_trial_csv(path: impl AsRef<Path>, schema: &TrialSchema) -> Result<LoadedTrial> {
    read_trial_csv(File::open(path)?, schema)
}

/// Write a trial as CSV; values use the shortest representation that reads back exactly.
pub fn write_trial_csv<W: Write>(writer: W, d: &TrialDataset, schema: &TrialSchema, covariate_names: &[String]) -> Result<()> {
    if covariate_names.len() != d.p() {
        return Err(Error::Dimension("one name per covariate is required".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.outcome.clone(), schema.treatment.clone()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![d.y[i].to_string(), d.a[i].to_string()];
        rec.extend(d.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write per-individual potential risks and predicted effects.
pub fn write_predictions_csv<W: Write>(writer: W, preds: &RiskPredictionSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "g0", "g1", "delta", "lp0", "lp1", "delta_lp"])?;
    for i in 0..preds.len() {
        w.write_record(&[
            (i + 1).to_string(),
            preds.g0[i].to_string(),
            preds.g1[i].to_string(),
            preds.delta[i].to_string(),
            preds.lp0[i].to_string(),
            preds.lp1[i].to_string(),
            preds.delta_lp[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A fitted model as stored on disk, with the covariate names it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub covariates: Vec<String>,
    pub model: IteModel,
}

impl ModelFile {
    pub fn validate(self) -> Result<Self> {
        let spec = &self.model.spec;
        if spec.is_empty() {
            return Err(Error::Invalid("model has no terms".into()));
        }
        if self.model.fit.coefficients.len() != spec.len() {
            return Err(Error::Invalid(format!(
                "{} coefficients for {} terms",
                self.model.fit.coefficients.len(),
                spec.len()
            )));
        }
        if self.model.fit.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite coefficient".into()));
        }
        if spec.required_covariates() > self.covariates.len() {
            return Err(Error::Invalid(format!(
                "terms use {} covariates but {} are named",
                spec.required_covariates(),
                self.covariates.len()
            )));
        }
        Ok(self)
    }
}

pub fn parse_model_json(bytes: &[u8]) -> Result<ModelFile> {
    serde_json::from_slice::<ModelFile>(bytes)?.validate()
}

pub fn read_model_json(path: impl AsRef<Path>) -> Result<ModelFile> {
    parse_model_json(&std::fs::read(path)?)
}

pub fn write_model_json<W: Write>(mut writer: W, model: &ModelFile) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, model)?;
    writer.write_all(b"\n")?;
    Ok(())
}

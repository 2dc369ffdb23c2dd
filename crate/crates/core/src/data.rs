//! Shared domain types: trial data, potential-risk predictions, matched pairs and metric
//! estimates. Nothing in here computes a statistic.
//!
//! Event direction is fixed: `Y = 1` is harmful, so a negative predicted risk difference
//! means benefit from treatment.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{expit, logit, max_logit};

/// Outcome coding of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    #[default]
    Binary,
    Continuous,
}

/// Treatment arm label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }
}

/// One two-arm study: outcome, treatment indicator and covariates per individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub x: Array2<f64>,
    #[serde(default)]
    pub outcome_kind: OutcomeKind,
}

impl TrialDataset {
    /// Build and validate a binary-outcome dataset.
    pub fn new(y: Vec<f64>, a: Vec<u8>, x: Array2<f64>) -> Result<Self> {
        Self::with_kind(y, a, x, OutcomeKind::Binary)
    }

    pub fn with_kind(y: Vec<f64>, a: Vec<u8>, x: Array2<f64>, kind: OutcomeKind) -> Result<Self> {
        TrialDataset {
            y,
            a,
            x,
            outcome_kind: kind,
        }
        .validate()
    }

    /// Returns the dataset unchanged if every invariant holds, otherwise the first violation.
    pub fn validate(self) -> Result<Self> {
        let n = self.y.len();
        if self.a.len() != n || self.x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {} rows, a has {}, X has {}",
                n,
                self.a.len(),
                self.x.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 individuals, got {n}")));
        }
        if let Some(i) = self.a.iter().position(|&a| a > 1) {
            return Err(Error::InvalidData(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                self.a[i]
            )));
        }
        let n1 = self.a.iter().filter(|&&a| a == 1).count();
        if n1 == n {
            return Err(Error::InvalidData("empty control arm".into()));
        }
        if n1 == 0 {
            return Err(Error::InvalidData("empty treated arm".into()));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("missing or non-finite outcome at row {i}")));
        }
        if self.outcome_kind == OutcomeKind::Binary {
            if let Some(i) = self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "outcome at row {i} is {}, binary mode requires 0 or 1",
                    self.y[i]
                )));
            }
        }
        if let Some(((i, j), _)) = self.x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "missing or non-finite covariate at row {i}, column {j}"
            )));
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Indices of individuals in one arm, in ascending order.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        let code = arm.code();
        (0..self.n()).filter(|&i| self.a[i] == code).collect()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.a.iter().filter(|&&a| a == 1).count();
        (self.n() - n1, n1)
    }

    /// Row subset in the given order (duplicates allowed, as in bootstrap resamples).
    /// The result is not re-validated; callers check arm presence where it matters.
    pub fn select(&self, idx: &[usize]) -> TrialDataset {
        TrialDataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select(Axis(0), idx),
            outcome_kind: self.outcome_kind,
        }
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }
}

/// Per-individual predicted potential-outcome risks on both scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPredictionSet {
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub delta: Vec<f64>,
    pub lp0: Vec<f64>,
    pub lp1: Vec<f64>,
    pub delta_lp: Vec<f64>,
}

impl RiskPredictionSet {
    /// From predicted control and treated risks.
    pub fn from_probs(g0: Vec<f64>, g1: Vec<f64>) -> Result<Self> {
        if g0.len() != g1.len() {
            return Err(Error::Dimension(format!(
                "g0 has {} entries, g1 has {}",
                g0.len(),
                g1.len()
            )));
        }
        if let Some(i) = g0.iter().chain(&g1).position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidData(format!(
                "prediction {} is not a probability",
                i % g0.len().max(1)
            )));
        }
        let delta = g0.iter().zip(&g1).map(|(p0, p1)| p1 - p0).collect();
        let lp0: Vec<f64> = g0.iter().map(|&p| logit(p)).collect();
        let lp1: Vec<f64> = g1.iter().map(|&p| logit(p)).collect();
        let delta_lp = lp0.iter().zip(&lp1).map(|(l0, l1)| l1 - l0).collect();
        Ok(RiskPredictionSet {
            g0,
            g1,
            delta,
            lp0,
            lp1,
            delta_lp,
        })
    }

    /// From linear predictors. Logits beyond the clamping range are pulled back to it
    /// so that both constructions agree.
    pub fn from_logits(lp0: Vec<f64>, lp1: Vec<f64>) -> Result<Self> {
        if lp0.len() != lp1.len() {
            return Err(Error::Dimension(format!(
                "lp0 has {} entries, lp1 has {}",
                lp0.len(),
                lp1.len()
            )));
        }
        if lp0.iter().chain(&lp1).any(|v| v.is_nan()) {
            return Err(Error::InvalidData("NaN linear predictor".into()));
        }
        let bound = max_logit();
        let lp0: Vec<f64> = lp0.into_iter().map(|v| v.clamp(-bound, bound)).collect();
        let lp1: Vec<f64> = lp1.into_iter().map(|v| v.clamp(-bound, bound)).collect();
        let g0: Vec<f64> = lp0.iter().map(|&v| expit(v)).collect();
        let g1: Vec<f64> = lp1.iter().map(|&v| expit(v)).collect();
        let delta = g0.iter().zip(&g1).map(|(p0, p1)| p1 - p0).collect();
        let delta_lp = lp0.iter().zip(&lp1).map(|(l0, l1)| l1 - l0).collect();
        Ok(RiskPredictionSet {
            g0,
            g1,
            delta,
            lp0,
            lp1,
            delta_lp,
        })
    }

    pub fn len(&self) -> usize {
        self.g0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g0.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> RiskPredictionSet {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        RiskPredictionSet {
            g0: pick(&self.g0),
            g1: pick(&self.g1),
            delta: pick(&self.delta),
            lp0: pick(&self.lp0),
            lp1: pick(&self.lp1),
            delta_lp: pick(&self.delta_lp),
        }
    }
}

/// 1:1 control-treated pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairSet {
    /// `(control index, treated index)` into the caller's control and treated slices.
    pub pairs: Vec<(usize, usize)>,
    pub match_scalar: String,
    pub total_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    CbenDelta,
    CbenY0,
    Mbcb,
    CalIntercept,
    CalSlope,
    AteError,
    COutcome,
    Brier,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::CbenDelta,
        MetricName::CbenY0,
        MetricName::Mbcb,
        MetricName::CalIntercept,
        MetricName::CalSlope,
        MetricName::AteError,
        MetricName::COutcome,
        MetricName::Brier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::CbenDelta => "cben_delta",
            MetricName::CbenY0 => "cben_y0",
            MetricName::Mbcb => "mbcb",
            MetricName::CalIntercept => "cal_intercept",
            MetricName::CalSlope => "cal_slope",
            MetricName::AteError => "ate_error",
            MetricName::COutcome => "c_outcome",
            MetricName::Brier => "brier",
        }
    }

    pub fn is_concordance(self) -> bool {
        matches!(
            self,
            MetricName::CbenDelta | MetricName::CbenY0 | MetricName::Mbcb | MetricName::COutcome
        )
    }

    pub fn parse(s: &str) -> Option<MetricName> {
        MetricName::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalContext {
    Apparent,
    Boot632plus,
    OptimismCorrected,
    External,
    SampleReference,
    PopulationReference,
    NaiveReference,
}

impl EvalContext {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalContext::Apparent => "apparent",
            EvalContext::Boot632plus => "boot632plus",
            EvalContext::OptimismCorrected => "optimism_corrected",
            EvalContext::External => "external",
            EvalContext::SampleReference => "sample_reference",
            EvalContext::PopulationReference => "population_reference",
            EvalContext::NaiveReference => "naive_reference",
        }
    }
}

impl fmt::Display for EvalContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named statistic with its evaluation context. `value` is `None` when the statistic
/// is not estimable; the reason is recorded under `meta["non_estimable"]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub name: MetricName,
    pub context: EvalContext,
    pub value: Option<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricEstimate {
    pub fn new(name: MetricName, context: EvalContext, value: f64) -> Self {
        if !value.is_finite() {
            return Self::non_estimable(name, context, "non-finite value");
        }
        MetricEstimate {
            name,
            context,
            value: Some(value),
            meta: BTreeMap::new(),
        }
    }

    pub fn non_estimable(name: MetricName, context: EvalContext, reason: &str) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("non_estimable".to_string(), serde_json::Value::from(reason));
        MetricEstimate {
            name,
            context,
            value: None,
            meta,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn in_context(mut self, context: EvalContext) -> Self {
        self.context = context;
        self
    }

    pub fn is_estimable(&self) -> bool {
        self.value.is_some()
    }
}

/// A simulated population with both potential outcomes known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationWithTruth {
    pub x: Array2<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub y0: Vec<u8>,
    pub y1: Vec<u8>,
    pub a: Vec<u8>,
}

impl PopulationWithTruth {
    pub fn len(&self) -> usize {
        self.p0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p0.is_empty()
    }

    /// Observed outcome by consistency: `y0` under control, `y1` under treatment.
    pub fn observed_y(&self, i: usize) -> u8 {
        if self.a[i] == 1 {
            self.y1[i]
        } else {
            self.y0[i]
        }
    }

    /// The observed trial for the given rows.
    pub fn observed(&self, idx: &[usize]) -> Result<TrialDataset> {
        TrialDataset::new(
            idx.iter().map(|&i| self.observed_y(i) as f64).collect(),
            idx.iter().map(|&i| self.a[i]).collect(),
            self.x.select(Axis(0), idx),
        )
    }

    pub fn select(&self, idx: &[usize]) -> PopulationWithTruth {
        PopulationWithTruth {
            x: self.x.select(Axis(0), idx),
            p0: idx.iter().map(|&i| self.p0[i]).collect(),
            p1: idx.iter().map(|&i| self.p1[i]).collect(),
            y0: idx.iter().map(|&i| self.y0[i]).collect(),
            y1: idx.iter().map(|&i| self.y1[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
        }
    }

    /// True potential risks as a prediction set.
    pub fn truth(&self) -> Result<RiskPredictionSet> {
        RiskPredictionSet::from_probs(self.p0.clone(), self.p1.clone())
    }
}

//! TOML configuration: data schema, model terms, validation plan and simulation preset.
//!
//! ```toml
//! [data]
//! outcome = "y"
//! treatment = "a"
//! covariates = ["age", "sbp"]
//!
//! [model]
//! terms = ["(intercept)", "a", "age", "sbp", "a:age", "a:sbp"]
//!
//! [validation]
//! bootstrap_replicates = 200
//! seed = 7
//!
//! [simulation]
//! preset = "paper-desk"
//! n_sim = 50
//! ```

use serde::{Deserialize, Serialize};

use crate::data::MetricName;
use crate::error::{Error, Result};
use crate::glm::{DesignSpec, Term};
use crate::io::TrialSchema;
use crate::matching::{MatchAlgorithm, MatchMode, MatchSpec};
use crate::resampling::ValidationPlan;
use crate::simulation::StudyConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub data: Option<TrialSchema>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub validation: Option<ValidationSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Term names: `(intercept)`, `a`, a covariate name, or `a:<covariate>`. Empty means
    /// the full interaction model.
    #[serde(default)]
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub bootstrap_replicates: Option<usize>,
    pub seed: Option<u64>,
    pub stratified: Option<bool>,
    pub repeats: Option<usize>,
    pub bootstrap_repeats: Option<usize>,
    pub metrics: Option<Vec<String>>,
    pub matching: Option<MatchMode>,
    pub algorithm: Option<MatchAlgorithm>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub preset: Option<String>,
    pub n_sim: Option<usize>,
    pub sample_sizes: Option<Vec<usize>>,
    pub v2_size: Option<usize>,
    pub bootstrap_replicates: Option<usize>,
    pub bootstrap: Option<bool>,
    pub stratified: Option<bool>,
    pub population_size: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub bootstrap_repeats: Option<usize>,
}

/// Parse a configuration document.
pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text)?;
    if let Some(v) = &cfg.validation {
        v.plan()?;
    }
    if let Some(s) = &cfg.simulation {
        s.study()?;
    }
    Ok(cfg)
}

/// Resolve one term name against the covariate names.
pub fn parse_term(name: &str, covariates: &[String]) -> Result<Term> {
    let lookup = |c: &str| {
        covariates
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| Error::Invalid(format!("term {name:?} refers to unknown covariate {c:?}")))
    };
    match name.trim() {
        "(intercept)" | "1" => Ok(Term::Intercept),
        "a" => Ok(Term::Treatment),
        s => match s.strip_prefix("a:") {
            Some(c) => lookup(c.trim()).map(Term::Interaction),
            None => lookup(s).map(Term::Covariate),
        },
    }
}

impl ModelSection {
    pub fn design(&self, covariates: &[String]) -> Result<DesignSpec> {
        if self.terms.is_empty() {
            return Ok(DesignSpec::ite(covariates.len()));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| parse_term(t, covariates))
            .collect::<Result<Vec<_>>>()?;
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::Invalid(format!("duplicate term {t}")));
            }
        }
        Ok(DesignSpec { terms })
    }
}

impl ValidationSection {
    pub fn plan(&self) -> Result<ValidationPlan> {
        let mut plan = ValidationPlan::default();
        if let Some(b) = self.bootstrap_replicates {
            plan.bootstrap_replicates = b;
        }
        if let Some(s) = self.seed {
            plan.seed = s;
        }
        if let Some(s) = self.stratified {
            plan.stratified = s;
        }
        if let Some(r) = self.repeats {
            plan.repeats = r;
        }
        if let Some(r) = self.bootstrap_repeats {
            plan.bootstrap_repeats = r;
        }
        if let Some(ms) = &self.metrics {
            plan.metrics = ms
                .iter()
                .map(|m| MetricName::parse(m).ok_or_else(|| Error::Invalid(format!("unknown metric {m:?}"))))
                .collect::<Result<_>>()?;
        }
        plan.matching = MatchSpec {
            mode: self.matching.unwrap_or_default(),
            algorithm: self.algorithm.unwrap_or_default(),
            ..plan.matching
        };
        if plan.bootstrap_replicates == 0 || plan.repeats == 0 || plan.bootstrap_repeats == 0 {
            return Err(Error::Invalid("replicate and repeat counts must be at least 1".into()));
        }
        Ok(plan)
    }
}

/// Named simulation presets.
pub fn preset(name: &str) -> Result<StudyConfig> {
    match name {
        "paper-desk" => Ok(StudyConfig::paper_desk()),
        "paper" => Ok(StudyConfig {
            n_sim: 500,
            ..StudyConfig::paper_desk()
        }),
        _ => Err(Error::Invalid(format!("unknown preset {name:?} (known: paper-desk, paper)"))),
    }
}

impl SimulationSection {
    pub fn study(&self) -> Result<StudyConfig> {
        let mut c = preset(self.preset.as_deref().unwrap_or("paper-desk"))?;
        if let Some(v) = self.n_sim {
            c.n_sim = v;
        }
        if let Some(v) = &self.sample_sizes {
            c.sample_sizes = v.clone();
        }
        if let Some(v) = self.v2_size {
            c.v2_size = v;
        }
        if let Some(v) = self.bootstrap_replicates {
            c.bootstrap_replicates = v;
        }
        if let Some(v) = self.bootstrap {
            c.bootstrap = v;
        }
        if let Some(v) = self.stratified {
            c.stratified_bootstrap = v;
        }
        if let Some(v) = self.population_size {
            c.development.population_size = v;
            c.external.population_size = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.repeats {
            c.repeats = v;
        }
        if let Some(v) = self.bootstrap_repeats {
            c.bootstrap_repeats = v;
        }
        c.validate()?;
        Ok(c)
    }
}

//! Monte Carlo study: logistic data-generating mechanisms with both potential outcomes,
//! repeated development/validation draws, and bias/RMSE against reference estimands.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{ite_calibration, CalibrationFit};
use crate::concordance::{c_delta_ben, mbcb, DEFAULT_REPEATS};
use crate::data::{Arm, MetricName, PopulationWithTruth, RiskPredictionSet};
use crate::error::{Error, Result};
use crate::glm::{predict_potential_risks, DesignSpec, IteModel};
use crate::matching::MatchSpec;
use crate::resampling::{
    apparent_performance, external_validate, internal_validate, ExternalMode, ValidationPlan, BOOTSTRAP_METRICS,
    BOOTSTRAP_REPEATS,
};
use crate::data::EvalContext;
use crate::rng;
use crate::stats::{compensated_sum, expit, mean};

/// Logistic DGM over `{1, a, x1..xp, a*x1..a*xp}` with independent standard normal
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub name: String,
    pub beta: Vec<f64>,
    pub p: usize,
    pub population_size: usize,
}

impl DgmSpec {
    pub fn dgm1() -> Self {
        DgmSpec {
            name: "dgm1".into(),
            beta: vec![-1.0, -0.75, 1.0, 0.0, 0.0, 0.5],
            p: 2,
            population_size: 100_000,
        }
    }

    pub fn dgm2() -> Self {
        DgmSpec {
            name: "dgm2".into(),
            beta: vec![-0.5, -0.5, 0.75, 0.25, 0.25, 0.25],
            p: 2,
            population_size: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != 2 * self.p + 2 {
            return Err(Error::Invalid(format!(
                "{}: expected {} coefficients for p = {}, got {}",
                self.name,
                2 * self.p + 2,
                self.p,
                self.beta.len()
            )));
        }
        if self.population_size < 2 {
            return Err(Error::Invalid(format!("{}: population must have at least two members", self.name)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite coefficient", self.name)));
        }
        Ok(())
    }

    /// Linear predictors under control and treatment for one covariate row.
    pub fn linear_predictors(&self, x: &[f64]) -> (f64, f64) {
        let p = self.p;
        let mut lp0 = self.beta[0];
        let mut lp1 = self.beta[0] + self.beta[1];
        for j in 0..p {
            lp0 += self.beta[2 + j] * x[j];
            lp1 += (self.beta[2 + j] + self.beta[2 + p + j]) * x[j];
        }
        (lp0, lp1)
    }
}

/// Draw a population: covariates, true potential risks, one draw of each potential
/// outcome and independent 1:1 treatment assignment.
pub fn generate_population(spec: &DgmSpec, seed: u64) -> Result<PopulationWithTruth> {
    spec.validate()?;
    let n = spec.population_size;
    let mut rng = rng::stream(seed, &[rng::tag(&spec.name), rng::tag("population")]);
    let x = Array2::from_shape_fn((n, spec.p), |_| rng.sample::<f64, _>(StandardNormal));
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let (mut p0, mut p1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y0, mut y1, mut a) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut row = vec![0.0; spec.p];
    for i in 0..n {
        row.iter_mut().enumerate().for_each(|(j, v)| *v = x[[i, j]]);
        let (l0, l1) = spec.linear_predictors(&row);
        let (q0, q1) = (expit(l0), expit(l1));
        p0.push(q0);
        p1.push(q1);
        y0.push(u8::from(rng.random::<f64>() < q0));
        y1.push(u8::from(rng.random::<f64>() < q1));
        a.push(u8::from(coin.sample(&mut rng)));
    }
    Ok(PopulationWithTruth { x, p0, p1, y0, y1, a })
}

/// Replication settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_sim: usize,
    pub sample_sizes: Vec<usize>,
    /// External sample from the second DGM; the same size for every development size.
    pub v2_size: usize,
    pub bootstrap_replicates: usize,
    /// Run bootstrap internal validation (the most expensive part).
    pub bootstrap: bool,
    #[serde(default)]
    pub stratified_bootstrap: bool,
    pub repeats: usize,
    pub bootstrap_repeats: usize,
    pub seed: u64,
    pub development: DgmSpec,
    pub external: DgmSpec,
    #[serde(default)]
    pub matching: MatchSpec,
}

impl StudyConfig {
    /// Reduced replication of the published design: 200 runs instead of 500.
    pub fn paper_desk() -> Self {
        StudyConfig {
            n_sim: 200,
            sample_sizes: vec![500, 750, 1000],
            v2_size: 1000,
            bootstrap_replicates: 100,
            bootstrap: true,
            stratified_bootstrap: false,
            repeats: DEFAULT_REPEATS,
            bootstrap_repeats: BOOTSTRAP_REPEATS,
            seed: 20_240_501,
            development: DgmSpec::dgm1(),
            external: DgmSpec::dgm2(),
            matching: MatchSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.development.validate()?;
        self.external.validate()?;
        if self.development.p != self.external.p {
            return Err(Error::Invalid("both DGMs must have the same number of covariates".into()));
        }
        let counts = [
            ("n_sim", self.n_sim),
            ("v2_size", self.v2_size),
            ("bootstrap_replicates", self.bootstrap_replicates),
            ("repeats", self.repeats),
            ("bootstrap_repeats", self.bootstrap_repeats),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{k} must be at least 1")));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Invalid("sample sizes must be non-empty and positive".into()));
        }
        let max_n = *self.sample_sizes.iter().max().unwrap();
        if 2 * max_n > self.development.population_size {
            return Err(Error::Invalid("development population too small for D and V1 draws".into()));
        }
        if self.v2_size > self.external.population_size {
            return Err(Error::Invalid("external population too small for V2 draws".into()));
        }
        Ok(())
    }
}

/// The seven evaluation settings plus the local-refit variants of the external ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Apparent,
    Plus632,
    OptimismCorrected,
    V1,
    V2,
    V1Local,
    V2Local,
}

impl Setting {
    pub const ALL: [Setting; 7] = [
        Setting::Apparent,
        Setting::Plus632,
        Setting::OptimismCorrected,
        Setting::V1,
        Setting::V2,
        Setting::V1Local,
        Setting::V2Local,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Apparent => "apparent",
            Setting::Plus632 => "boot_632plus",
            Setting::OptimismCorrected => "optimism_corrected",
            Setting::V1 => "v1",
            Setting::V2 => "v2",
            Setting::V1Local => "v1_local",
            Setting::V2Local => "v2_local",
        }
    }

    pub fn parse(s: &str) -> Option<Setting> {
        Setting::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether the setting evaluates data from the second DGM.
    pub fn is_external_dgm(self) -> bool {
        matches!(self, Setting::V2 | Setting::V2Local)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One estimate with the matching references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n: usize,
    pub run: usize,
    pub setting: Setting,
    pub metric: MetricName,
    pub estimate: Option<f64>,
    pub sample_reference: Option<f64>,
    pub population_reference: Option<f64>,
    /// Calibration only: population value with the evaluated model's control-risk offset.
    pub naive_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub n: usize,
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: StudyConfig,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

/// Reference estimands for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct References {
    pub concordance: Option<f64>,
    pub cal_intercept: Option<f64>,
    pub cal_slope: Option<f64>,
}

impl References {
    fn get(&self, metric: MetricName) -> Option<f64> {
        match metric {
            MetricName::CalIntercept => self.cal_intercept,
            MetricName::CalSlope => self.cal_slope,
            m if m.is_concordance() => self.concordance,
            _ => None,
        }
    }

    fn with_calibration(mut self, fit: Option<CalibrationFit>) -> Self {
        self.cal_intercept = fit.as_ref().and_then(|f| f.intercept);
        self.cal_slope = fit.and_then(|f| f.slope);
        self
    }
}

fn fractional_calibration(
    pop: &PopulationWithTruth,
    idx: Option<&[usize]>,
    preds: &RiskPredictionSet,
    offset: &[f64],
) -> Option<CalibrationFit> {
    let (y, dl, off): (Vec<f64>, Vec<f64>, Vec<f64>) = match idx {
        Some(idx) => (
            idx.iter().map(|&i| pop.p1[i]).collect(),
            idx.iter().map(|&i| preds.delta_lp[i]).collect(),
            idx.iter().map(|&i| offset[i]).collect(),
        ),
        None => (pop.p1.clone(), preds.delta_lp.clone(), offset.to_vec()),
    };
    ite_calibration(&y, &dl, &off).ok()
}

/// Sample references: model-based c-for-benefit with the true benefit probabilities,
/// and the calibration estimand in the sample's treated arm with true `P(Y1)` as
/// response and the true control-risk logit as offset.
pub fn sample_references(sample: &PopulationWithTruth, preds: &RiskPredictionSet) -> Result<References> {
    let truth = sample.truth()?;
    let conc = mbcb(&preds.delta, &truth)?.value;
    let treated: Vec<usize> = (0..sample.len()).filter(|&i| sample.a[i] == Arm::Treated.code()).collect();
    Ok(References {
        concordance: conc,
        ..Default::default()
    }
    .with_calibration(fractional_calibration(sample, Some(&treated), preds, &truth.lp0)))
}

/// Population references: c-statistic against one realization of both potential
/// outcomes, and the calibration estimand over the whole population.
pub fn population_references(pop: &PopulationWithTruth, preds: &RiskPredictionSet) -> Result<References> {
    let truth = pop.truth()?;
    let conc = c_delta_ben(&preds.delta, &pop.y0, &pop.y1)?.value;
    Ok(References {
        concordance: conc,
        ..Default::default()
    }
    .with_calibration(fractional_calibration(pop, None, preds, &truth.lp0)))
}

/// Naive calibration reference: as the population reference, but with the control-risk
/// offset taken from `anchor` (the evaluated model or a local control-arm model).
pub fn naive_references(pop: &PopulationWithTruth, preds: &RiskPredictionSet, anchor: &RiskPredictionSet) -> References {
    References::default().with_calibration(fractional_calibration(pop, None, preds, &anchor.lp0))
}

/// All references for predictions aligned to `pop` (sample or population).
pub fn compute_references(pop: &PopulationWithTruth, preds: &RiskPredictionSet) -> Result<BTreeMap<EvalContext, References>> {
    let mut out = BTreeMap::new();
    out.insert(EvalContext::SampleReference, sample_references(pop, preds)?);
    out.insert(EvalContext::PopulationReference, population_references(pop, preds)?);
    out.insert(EvalContext::NaiveReference, naive_references(pop, preds, preds));
    Ok(out)
}

struct Populations {
    dev: PopulationWithTruth,
    ext: PopulationWithTruth,
}

fn push_records(
    out: &mut Vec<RunRecord>,
    (n, run, setting): (usize, usize, Setting),
    estimates: impl IntoIterator<Item = (MetricName, Option<f64>)>,
    sample: &References,
    population: &References,
    naive: &References,
) {
    for (metric, estimate) in estimates {
        out.push(RunRecord {
            n,
            run,
            setting,
            metric,
            estimate,
            sample_reference: sample.get(metric),
            population_reference: population.get(metric),
            naive_reference: match metric {
                MetricName::CalIntercept | MetricName::CalSlope => naive.get(metric),
                _ => None,
            },
        });
    }
}

fn run_once(cfg: &StudyConfig, pops: &Populations, n: usize, run: usize) -> Result<Vec<RunRecord>> {
    let key = [n as u64, run as u64];
    let mut rng = rng::stream(cfg.seed, &[key[0], key[1], rng::tag("draw")]);
    let idx = sample(&mut rng, pops.dev.len(), 2 * n).into_vec();
    let v2_idx = sample(&mut rng, pops.ext.len(), cfg.v2_size).into_vec();
    let (d_pop, v1_pop, v2_pop) = (
        pops.dev.select(&idx[..n]),
        pops.dev.select(&idx[n..]),
        pops.ext.select(&v2_idx),
    );
    let all = |m: usize| (0..m).collect::<Vec<_>>();
    let d = d_pop.observed(&all(n))?;
    let v1 = v1_pop.observed(&all(n))?;
    let v2 = v2_pop.observed(&all(cfg.v2_size))?;

    let spec = DesignSpec::ite(cfg.development.p);
    let matching = MatchSpec {
        seed: rng::derive_seed(cfg.seed, &[key[0], key[1], rng::tag("matching")]),
        ..cfg.matching
    };
    let metrics = BOOTSTRAP_METRICS.to_vec();

    let (model, internal) = if cfg.bootstrap {
        let plan = ValidationPlan {
            bootstrap_replicates: cfg.bootstrap_replicates,
            metrics: metrics.clone(),
            seed: rng::derive_seed(cfg.seed, &[key[0], key[1], rng::tag("bootstrap")]),
            stratified: cfg.stratified_bootstrap,
            repeats: cfg.repeats,
            bootstrap_repeats: cfg.bootstrap_repeats,
            matching,
        };
        let iv = internal_validate(&d, &spec, &plan)?;
        (iv.model.clone(), iv.estimates)
    } else {
        let model = IteModel::fit(&spec, &d)?;
        let est = apparent_performance(&d, &model, &metrics, &matching, cfg.repeats)?;
        (model, est)
    };

    let on_dev = predict_potential_risks(&model, pops.dev.x.view())?;
    let on_ext = predict_potential_risks(&model, pops.ext.x.view())?;
    let pop_dev = population_references(&pops.dev, &on_dev)?;
    let pop_ext = population_references(&pops.ext, &on_ext)?;
    let naive_dev = naive_references(&pops.dev, &on_dev, &on_dev);
    let naive_ext = naive_references(&pops.ext, &on_ext, &on_ext);
    let local_naive = |v: &crate::data::TrialDataset, pop: &PopulationWithTruth, preds: &RiskPredictionSet| {
        IteModel::fit_control_arm(&spec, v)
            .and_then(|m| predict_potential_risks(&m, pop.x.view()))
            .map(|anchor| naive_references(pop, preds, &anchor))
            .unwrap_or_default()
    };
    let naive_v1_local = local_naive(&v1, &pops.dev, &on_dev);
    let naive_v2_local = local_naive(&v2, &pops.ext, &on_ext);

    let sample_d = sample_references(&d_pop, &predict_potential_risks(&model, d.covariates())?)?;
    let sample_v1 = sample_references(&v1_pop, &predict_potential_risks(&model, v1.covariates())?)?;
    let sample_v2 = sample_references(&v2_pop, &predict_potential_risks(&model, v2.covariates())?)?;

    let mut out = Vec::new();
    for (ctx, setting) in [
        (EvalContext::Apparent, Setting::Apparent),
        (EvalContext::Boot632plus, Setting::Plus632),
        (EvalContext::OptimismCorrected, Setting::OptimismCorrected),
    ] {
        let est: Vec<_> = internal.iter().filter(|e| e.context == ctx).map(|e| (e.name, e.value)).collect();
        push_records(&mut out, (n, run, setting), est, &sample_d, &pop_dev, &naive_dev);
    }
    let externals = [
        (Setting::V1, &v1, ExternalMode::Naive, &sample_v1, &pop_dev, &naive_dev),
        (Setting::V2, &v2, ExternalMode::Naive, &sample_v2, &pop_ext, &naive_ext),
        (Setting::V1Local, &v1, ExternalMode::LocalRefit, &sample_v1, &pop_dev, &naive_v1_local),
        (Setting::V2Local, &v2, ExternalMode::LocalRefit, &sample_v2, &pop_ext, &naive_v2_local),
    ];
    for (setting, data, mode, s, p, nv) in externals {
        // Matching on predicted effect does not involve any refit.
        let ms: Vec<MetricName> = match mode {
            ExternalMode::Naive => metrics.clone(),
            ExternalMode::LocalRefit => metrics.iter().copied().filter(|m| *m != MetricName::CbenDelta).collect(),
        };
        let ev = external_validate(&model, data, mode, &ms, &matching, cfg.repeats)?;
        let est: Vec<_> = ev.estimates.iter().map(|e| (e.name, e.value)).collect();
        push_records(&mut out, (n, run, setting), est, s, p, nv);
    }
    Ok(out)
}

/// Generate both populations and run every (sample size, run) cell. Runs are independent
/// and keyed by their own random streams, so the output does not depend on scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let pops = Populations {
        dev: generate_population(&cfg.development, cfg.seed)?,
        ext: generate_population(&cfg.external, cfg.seed)?,
    };
    run_study_on(cfg, &pops.dev, &pops.ext)
}

/// As [`run_study`] with the populations supplied.
pub fn run_study_on(
    cfg: &StudyConfig,
    dev: &PopulationWithTruth,
    ext: &PopulationWithTruth,
) -> Result<SimulationResult> {
    cfg.validate()?;
    let pops = Populations {
        dev: dev.clone(),
        ext: ext.clone(),
    };
    let cells: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.n_sim).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(n, run)| (n, run, run_once(cfg, &pops, n, run)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (n, run, res) in outcomes {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => failures.push(RunFailure {
                n,
                run,
                message: e.to_string(),
            }),
        }
    }
    Ok(SimulationResult {
        config: cfg.clone(),
        records,
        failures,
    })
}

/// Aggregate over runs for one (sample size, setting, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub setting: Setting,
    pub metric: MetricName,
    /// Runs with both an estimate and a population reference.
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
    pub mean_sample_reference: Option<f64>,
    pub mean_population_reference: f64,
    pub mean_naive_reference: Option<f64>,
    /// Mean of reference minus estimate.
    pub bias: f64,
    pub rmse: f64,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Bias (`mean(reference - estimate)`) and RMSE against the population reference, per
/// sample size, setting and metric.
pub fn performance_summary(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(usize, Setting, MetricName), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.n, r.setting, r.metric)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((n, setting, metric), rs) in cells {
        let paired: Vec<(f64, f64)> = rs
            .iter()
            .filter_map(|r| Some((r.estimate?, r.population_reference?)))
            .collect();
        if paired.is_empty() {
            continue;
        }
        let k = paired.len() as f64;
        let est: Vec<f64> = paired.iter().map(|p| p.0).collect();
        let m = mean(&est);
        let m_ref = compensated_sum(paired.iter().map(|p| p.1)) / k;
        let sd = if paired.len() > 1 {
            (compensated_sum(est.iter().map(|e| (e - m) * (e - m))) / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push(SummaryRow {
            n,
            setting,
            metric,
            runs: paired.len(),
            mean: m,
            sd,
            mean_sample_reference: mean_opt(rs.iter().map(|r| r.sample_reference)),
            mean_population_reference: m_ref,
            mean_naive_reference: mean_opt(rs.iter().map(|r| r.naive_reference)),
            bias: m_ref - m,
            rmse: (compensated_sum(paired.iter().map(|(e, r)| (r - e) * (r - e))) / k).sqrt(),
        });
    }
    out
}

/// Plot-ready rows: mean and mean +/- 1 SD of the estimates per panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub n: usize,
    pub setting: Setting,
    pub metric: MetricName,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn plot_data(summary: &[SummaryRow]) -> Vec<PlotPoint> {
    summary
        .iter()
        .map(|r| PlotPoint {
            n: r.n,
            setting: r.setting,
            metric: r.metric,
            mean: r.mean,
            lower: r.mean - r.sd,
            upper: r.mean + r.sd,
        })
        .collect()
}

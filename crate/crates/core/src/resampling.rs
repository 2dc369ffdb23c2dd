//! Internal validation by bootstrap (0.632+ and optimism correction) and external
//! validation with optional local refits.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{ate_error, ite_calibration_on, CalibrationDirection};
use crate::concordance::{brier, c_outcome, cben_delta, cben_y0, mbcb, DEFAULT_REPEATS};
use crate::data::{Arm, EvalContext, MetricEstimate, MetricName, RiskPredictionSet, TrialDataset};
use crate::error::Result;
use crate::glm::{predict_potential_risks, DesignSpec, IteModel};
use crate::matching::MatchSpec;
use crate::rng;
use crate::stats::compensated_sum;

/// Subsample repeats for unequal arms inside bootstrap loops.
pub const BOOTSTRAP_REPEATS: usize = 100;

/// Share of dropped replicates above which a warning is attached.
const DROP_WARNING_SHARE: f64 = 0.2;

/// Result of combining apparent and out-of-sample performance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plus632 {
    pub value: f64,
    /// Out-of-sample value after clipping at the no-information value.
    pub oos_clipped: f64,
    /// Relative overfitting rate in `[0, 1]`.
    pub r: f64,
    /// Weight on the out-of-sample value, in `[0.632, 1]`.
    pub w: f64,
}

/// 0.632+ estimate for a statistic whose no-information value is `gamma`.
///
/// The out-of-sample value is first clipped so it never lies beyond `gamma` from the
/// apparent value's side; `R = |app - oos'| / |app - gamma|` when `oos'` is closer to
/// `gamma` than `app` is (else 0), `w = 0.632 / (1 - 0.368 R)` and the result is
/// `app (1 - w) + w oos'`.
pub fn plus632_combine(c_app: f64, c_oos: f64, gamma: f64) -> Plus632 {
    let oos_clipped = if c_app >= gamma {
        c_oos.max(gamma)
    } else {
        c_oos.min(gamma)
    };
    if c_app == gamma {
        return Plus632 {
            value: c_app,
            oos_clipped,
            r: 0.0,
            w: 0.632,
        };
    }
    let r = if (oos_clipped - gamma).abs() < (c_app - gamma).abs() {
        ((c_app - oos_clipped).abs() / (c_app - gamma).abs()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let w = 0.632 / (1.0 - 0.368 * r);
    Plus632 {
        value: c_app * (1.0 - w) + w * oos_clipped,
        oos_clipped,
        r,
        w,
    }
}

/// No-information value used by 0.632+; `None` where it cannot be defined.
pub fn no_information_value(metric: MetricName) -> Option<f64> {
    match metric {
        MetricName::CbenDelta | MetricName::CbenY0 | MetricName::Mbcb | MetricName::COutcome => Some(0.5),
        MetricName::CalSlope => Some(0.0),
        _ => None,
    }
}

/// Bootstrap settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub bootstrap_replicates: usize,
    pub metrics: Vec<MetricName>,
    pub seed: u64,
    /// Resample within arms instead of over all individuals.
    #[serde(default)]
    pub stratified: bool,
    /// Subsample repeats for the matched statistics on the original data.
    pub repeats: usize,
    /// Subsample repeats for the matched statistics inside bootstrap replicates.
    pub bootstrap_repeats: usize,
    pub matching: MatchSpec,
}

impl Default for ValidationPlan {
    fn default() -> Self {
        ValidationPlan {
            bootstrap_replicates: 100,
            metrics: BOOTSTRAP_METRICS.to_vec(),
            seed: 1,
            stratified: false,
            repeats: DEFAULT_REPEATS,
            bootstrap_repeats: BOOTSTRAP_REPEATS,
            matching: MatchSpec::default(),
        }
    }
}

/// Metrics that go through the bootstrap.
pub const BOOTSTRAP_METRICS: [MetricName; 5] = [
    MetricName::CbenDelta,
    MetricName::CbenY0,
    MetricName::Mbcb,
    MetricName::CalIntercept,
    MetricName::CalSlope,
];

type Values = BTreeMap<MetricName, Option<f64>>;

fn wants(metrics: &[MetricName], m: MetricName) -> bool {
    metrics.contains(&m)
}

/// Per-metric values for one evaluation.
struct Evaluation<'a> {
    data: &'a TrialDataset,
    /// Predictions under evaluation (delta, delta_lp).
    effect: &'a RiskPredictionSet,
    /// Predicted control risk used for matching in the `y0` statistic.
    matching: &'a RiskPredictionSet,
    /// Source of `P_benefit`.
    benefit: &'a RiskPredictionSet,
    /// Source of the calibration offset.
    anchor: &'a RiskPredictionSet,
}

impl Evaluation<'_> {
    fn run(&self, metrics: &[MetricName], spec: &MatchSpec, repeats: usize) -> Result<Vec<MetricEstimate>> {
        let mut out = Vec::new();
        if wants(metrics, MetricName::CbenDelta) {
            out.push(cben_delta(self.data, self.effect, spec, repeats)?);
        }
        if wants(metrics, MetricName::CbenY0) {
            out.push(cben_y0(self.data, self.effect, self.matching, spec, repeats)?);
        }
        if wants(metrics, MetricName::Mbcb) {
            out.push(mbcb(&self.effect.delta, self.benefit)?);
        }
        if wants(metrics, MetricName::CalIntercept) || wants(metrics, MetricName::CalSlope) {
            let cal = ite_calibration_on(self.data, self.effect, self.anchor, CalibrationDirection::Treated)?;
            let [i, s] = cal.estimates(EvalContext::Apparent);
            if wants(metrics, MetricName::CalIntercept) {
                out.push(i);
            }
            if wants(metrics, MetricName::CalSlope) {
                out.push(s);
            }
        }
        if wants(metrics, MetricName::AteError) {
            out.push(MetricEstimate::new(MetricName::AteError, EvalContext::Apparent, ate_error(self.data, self.effect)?));
        }
        if wants(metrics, MetricName::COutcome) || wants(metrics, MetricName::Brier) {
            let risk: Vec<f64> = (0..self.data.n())
                .map(|i| if self.data.a[i] == 1 { self.effect.g1[i] } else { self.effect.g0[i] })
                .collect();
            if wants(metrics, MetricName::COutcome) {
                out.push(c_outcome(&self.data.y, &risk)?);
            }
            if wants(metrics, MetricName::Brier) {
                out.push(brier(&self.data.y, &risk)?);
            }
        }
        Ok(out)
    }

    fn values(&self, metrics: &[MetricName], spec: &MatchSpec, repeats: usize) -> Result<Values> {
        Ok(self
            .run(metrics, spec, repeats)?
            .into_iter()
            .map(|m| (m.name, m.value))
            .collect())
    }
}

/// Apparent performance of `model` on its own development data.
pub fn apparent_performance(
    d: &TrialDataset,
    model: &IteModel,
    metrics: &[MetricName],
    spec: &MatchSpec,
    repeats: usize,
) -> Result<Vec<MetricEstimate>> {
    let preds = predict_potential_risks(model, d.covariates())?;
    Evaluation {
        data: d,
        effect: &preds,
        matching: &preds,
        benefit: &preds,
        anchor: &preds,
    }
    .run(metrics, spec, repeats)
}

#[derive(Default)]
struct Replicate {
    /// Apparent value in the resample and value of the resample model on the original data.
    optimism_pairs: BTreeMap<MetricName, (Option<f64>, Option<f64>)>,
    out_of_sample: Option<Values>,
    failed: bool,
}

fn bootstrap_indices(d: &TrialDataset, stratified: bool, rng: &mut impl Rng) -> Vec<usize> {
    if stratified {
        let mut idx = Vec::with_capacity(d.n());
        for arm in [Arm::Control, Arm::Treated] {
            let members = d.arm_indices(arm);
            idx.extend((0..members.len()).map(|_| members[rng.random_range(0..members.len())]));
        }
        idx
    } else {
        (0..d.n()).map(|_| rng.random_range(0..d.n())).collect()
    }
}

fn has_both_arms(d: &TrialDataset) -> bool {
    let (n0, n1) = d.arm_sizes();
    n0 > 0 && n1 > 0
}

fn run_replicate(
    b: usize,
    idx: Vec<usize>,
    d: &TrialDataset,
    spec: &DesignSpec,
    dev_preds: &RiskPredictionSet,
    plan: &ValidationPlan,
) -> Replicate {
    let boot = d.select(&idx);
    let failed = Replicate {
        failed: true,
        ..Default::default()
    };
    if !has_both_arms(&boot) {
        return failed;
    }
    let match_spec = MatchSpec {
        seed: rng::derive_seed(plan.seed, &[b as u64, rng::tag("subsample")]),
        ..plan.matching
    };
    let attempt = || -> Result<Replicate> {
        let model = IteModel::fit(spec, &boot)?;
        let on_boot = predict_potential_risks(&model, boot.covariates())?;
        let on_orig = predict_potential_risks(&model, d.covariates())?;

        let apparent = Evaluation {
            data: &boot,
            effect: &on_boot,
            matching: &on_boot,
            benefit: &on_boot,
            anchor: &on_boot,
        }
        .values(&plan.metrics, &match_spec, plan.bootstrap_repeats)?;
        // On the original data, benefit probabilities and the calibration offset come
        // from the development model.
        let test = Evaluation {
            data: d,
            effect: &on_orig,
            matching: &on_orig,
            benefit: dev_preds,
            anchor: dev_preds,
        }
        .values(&plan.metrics, &match_spec, plan.bootstrap_repeats)?;
        let optimism_pairs = plan
            .metrics
            .iter()
            .map(|&m| (m, (apparent.get(&m).copied().flatten(), test.get(&m).copied().flatten())))
            .collect();

        let mut in_sample = vec![false; d.n()];
        idx.iter().for_each(|&i| in_sample[i] = true);
        let oos_idx: Vec<usize> = (0..d.n()).filter(|&i| !in_sample[i]).collect();
        let oos = d.select(&oos_idx);
        let out_of_sample = if oos.n() >= 2 && has_both_arms(&oos) {
            oos_values(&oos, &on_orig.select(&oos_idx), spec, plan, &match_spec).ok()
        } else {
            None
        };
        Ok(Replicate {
            optimism_pairs,
            out_of_sample,
            failed: false,
        })
    };
    attempt().unwrap_or(failed)
}

/// Out-of-sample evaluation of a bootstrap model. Benefit probabilities come from a
/// model with the same specification fitted to the out-of-sample cases; the calibration
/// offset from a control-arm model fitted to the out-of-sample controls.
fn oos_values(
    oos: &TrialDataset,
    preds: &RiskPredictionSet,
    spec: &DesignSpec,
    plan: &ValidationPlan,
    match_spec: &MatchSpec,
) -> Result<Values> {
    let mut values = Values::new();
    let matched: Vec<MetricName> = plan
        .metrics
        .iter()
        .copied()
        .filter(|m| matches!(m, MetricName::CbenDelta | MetricName::CbenY0))
        .collect();
    let base = Evaluation {
        data: oos,
        effect: preds,
        matching: preds,
        benefit: preds,
        anchor: preds,
    };
    values.extend(base.values(&matched, match_spec, plan.bootstrap_repeats)?);
    if wants(&plan.metrics, MetricName::Mbcb) {
        let local = IteModel::fit(spec, oos).and_then(|m| predict_potential_risks(&m, oos.covariates()));
        values.insert(
            MetricName::Mbcb,
            local.ok().and_then(|p| mbcb(&preds.delta, &p).ok()).and_then(|m| m.value),
        );
    }
    if wants(&plan.metrics, MetricName::CalSlope) {
        let anchor = IteModel::fit_control_arm(spec, oos).and_then(|m| predict_potential_risks(&m, oos.covariates()));
        let slope = anchor
            .ok()
            .and_then(|a| ite_calibration_on(oos, preds, &a, CalibrationDirection::Treated).ok())
            .and_then(|c| c.slope);
        values.insert(MetricName::CalSlope, slope);
    }
    Ok(values)
}

/// Internal validation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalValidation {
    pub model: IteModel,
    pub estimates: Vec<MetricEstimate>,
    pub replicates: usize,
    pub dropped: usize,
    pub oos_dropped: usize,
    pub warnings: Vec<String>,
}

impl InternalValidation {
    pub fn get(&self, name: MetricName, context: EvalContext) -> Option<&MetricEstimate> {
        self.estimates.iter().find(|m| m.name == name && m.context == context)
    }
}

/// Bootstrap internal validation of the model specification `spec` on `d`.
pub fn internal_validate(d: &TrialDataset, spec: &DesignSpec, plan: &ValidationPlan) -> Result<InternalValidation> {
    if plan.bootstrap_replicates == 0 {
        return Err(crate::Error::Invalid("at least one bootstrap replicate is required".into()));
    }
    let resamples: Vec<Vec<usize>> = (0..plan.bootstrap_replicates)
        .map(|b| {
            let mut rng = rng::stream(plan.seed, &[b as u64, rng::tag("bootstrap")]);
            bootstrap_indices(d, plan.stratified, &mut rng)
        })
        .collect();
    internal_validate_on(d, spec, plan, resamples)
}

/// Internal validation with caller-supplied resamples (row indices into `d`, with
/// repeats). `plan.bootstrap_replicates` is ignored.
pub fn internal_validate_on(
    d: &TrialDataset,
    spec: &DesignSpec,
    plan: &ValidationPlan,
    resamples: Vec<Vec<usize>>,
) -> Result<InternalValidation> {
    if resamples.is_empty() {
        return Err(crate::Error::Invalid("at least one resample is required".into()));
    }
    if resamples.iter().flatten().any(|&i| i >= d.n()) {
        return Err(crate::Error::Dimension("resample index out of range".into()));
    }
    let model = IteModel::fit(spec, d)?;
    let dev_preds = predict_potential_risks(&model, d.covariates())?;
    let apparent = Evaluation {
        data: d,
        effect: &dev_preds,
        matching: &dev_preds,
        benefit: &dev_preds,
        anchor: &dev_preds,
    }
    .run(&plan.metrics, &plan.matching, plan.repeats)?;

    let replicates: Vec<Replicate> = resamples
        .into_par_iter()
        .enumerate()
        .map(|(b, idx)| run_replicate(b, idx, d, spec, &dev_preds, plan))
        .collect();
    Ok(summarize(model, apparent, &replicates, plan))
}

fn summarize(
    model: IteModel,
    apparent: Vec<MetricEstimate>,
    replicates: &[Replicate],
    plan: &ValidationPlan,
) -> InternalValidation {
    let b = replicates.len();
    let dropped = replicates.iter().filter(|r| r.failed).count();
    let oos_dropped = replicates.iter().filter(|r| r.out_of_sample.is_none()).count();
    let mut warnings = Vec::new();
    if dropped as f64 > DROP_WARNING_SHARE * b as f64 {
        warnings.push(format!("{dropped} of {b} bootstrap replicates failed"));
    }

    let mut estimates = Vec::new();
    for app in &apparent {
        estimates.push(app.clone().with_meta("bootstrap_replicates", b));
    }
    for app in &apparent {
        let m = app.name;
        let Some(app_value) = app.value else {
            estimates.push(MetricEstimate::non_estimable(m, EvalContext::OptimismCorrected, "apparent value not estimable"));
            continue;
        };
        let diffs: Vec<f64> = replicates
            .iter()
            .filter_map(|r| match r.optimism_pairs.get(&m) {
                Some((Some(a), Some(t))) => Some(a - t),
                _ => None,
            })
            .collect();
        if diffs.is_empty() {
            estimates.push(MetricEstimate::non_estimable(m, EvalContext::OptimismCorrected, "no usable bootstrap replicate"));
        } else {
            let optimism = compensated_sum(diffs.iter().copied()) / diffs.len() as f64;
            estimates.push(
                MetricEstimate::new(m, EvalContext::OptimismCorrected, app_value - optimism)
                    .with_meta("optimism", optimism)
                    .with_meta("replicates_used", diffs.len())
                    .with_meta("bootstrap_replicates", b),
            );
        }
    }
    for app in &apparent {
        let m = app.name;
        if !BOOTSTRAP_METRICS.contains(&m) {
            continue;
        }
        let Some(gamma) = no_information_value(m) else {
            estimates.push(MetricEstimate::non_estimable(
                m,
                EvalContext::Boot632plus,
                "no no-information value exists for this statistic",
            ));
            continue;
        };
        let oos: Vec<f64> = replicates
            .iter()
            .filter_map(|r| r.out_of_sample.as_ref().and_then(|v| v.get(&m).copied().flatten()))
            .collect();
        match (app.value, oos.is_empty()) {
            (Some(a), false) => {
                let c_oos = compensated_sum(oos.iter().copied()) / oos.len() as f64;
                let comb = plus632_combine(a, c_oos, gamma);
                estimates.push(
                    MetricEstimate::new(m, EvalContext::Boot632plus, comb.value)
                        .with_meta("c_oos", c_oos)
                        .with_meta("r", comb.r)
                        .with_meta("w", comb.w)
                        .with_meta("gamma", gamma)
                        .with_meta("replicates_used", oos.len())
                        .with_meta("bootstrap_replicates", b),
                );
            }
            _ => estimates.push(MetricEstimate::non_estimable(m, EvalContext::Boot632plus, "no usable out-of-sample evaluation")),
        }
    }
    if plan.repeats != plan.bootstrap_repeats {
        for e in estimates.iter_mut().filter(|e| matches!(e.name, MetricName::CbenDelta | MetricName::CbenY0)) {
            if e.context != EvalContext::Apparent {
                e.meta.insert("bootstrap_subsample_repeats".into(), plan.bootstrap_repeats.into());
            }
        }
    }
    InternalValidation {
        model,
        estimates,
        replicates: b,
        dropped,
        oos_dropped,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalMode {
    /// Everything from the evaluated model.
    #[default]
    Naive,
    /// Control risk and benefit probabilities re-estimated on the external data.
    LocalRefit,
}

/// External validation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalValidation {
    pub mode: ExternalMode,
    pub estimates: Vec<MetricEstimate>,
    pub warnings: Vec<String>,
}

impl ExternalValidation {
    pub fn get(&self, name: MetricName) -> Option<&MetricEstimate> {
        self.estimates.iter().find(|m| m.name == name)
    }
}

/// Evaluate `model` on independent data. In local-refit mode, matching for the `y0`
/// statistic and the calibration offset use a control-arm model fitted to `d_ext`, and
/// benefit probabilities use the full specification refitted to `d_ext`. A failed refit
/// falls back to the naive source with a warning.
pub fn external_validate(
    model: &IteModel,
    d_ext: &TrialDataset,
    mode: ExternalMode,
    metrics: &[MetricName],
    matching: &MatchSpec,
    repeats: usize,
) -> Result<ExternalValidation> {
    let preds = predict_potential_risks(model, d_ext.covariates())?;
    let mut warnings = Vec::new();
    let (anchor, benefit) = match mode {
        ExternalMode::Naive => (preds.clone(), preds.clone()),
        ExternalMode::LocalRefit => {
            let anchor = IteModel::fit_control_arm(&model.spec, d_ext)
                .and_then(|m| predict_potential_risks(&m, d_ext.covariates()))
                .unwrap_or_else(|e| {
                    warnings.push(format!("control-arm refit failed ({e}); using the evaluated model"));
                    preds.clone()
                });
            let benefit = IteModel::fit(&model.spec, d_ext)
                .and_then(|m| predict_potential_risks(&m, d_ext.covariates()))
                .unwrap_or_else(|e| {
                    warnings.push(format!("full refit failed ({e}); using the evaluated model"));
                    preds.clone()
                });
            (anchor, benefit)
        }
    };
    let estimates = Evaluation {
        data: d_ext,
        effect: &preds,
        matching: &anchor,
        benefit: &benefit,
        anchor: &anchor,
    }
    .run(metrics, matching, repeats)?
    .into_iter()
    .map(|m| {
        let m = m.in_context(EvalContext::External);
        if mode == ExternalMode::LocalRefit {
            m.with_meta("local_refit", true)
        } else {
            m
        }
    })
    .collect();
    Ok(ExternalValidation {
        mode,
        estimates,
        warnings,
    })
}

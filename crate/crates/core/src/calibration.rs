//! Calibration of predicted treatment effects.
//!
//! The main route fits, in the treated arm,
//! `logit P(Y = 1) = b0 + b1 * delta_lp + lp0` with the predicted control-risk logit as
//! offset; a perfectly calibrated model gives `(b0, b1) = (0, 1)`. Supporting routes:
//! residual regression for continuous outcomes, the average-effect error, classical
//! logistic recalibration and quantile groups.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, EvalContext, MetricEstimate, MetricName, RiskPredictionSet, TrialDataset};
use crate::error::{Error, Result};
use crate::glm::fit_logistic;
use crate::stats::{compensated_sum, mean};

/// Arms smaller than this get a warning.
pub const MIN_ARM_SIZE: usize = 20;

const VARIANCE_EPS: f64 = 1e-12;

/// Which arm the effect calibration model is fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationDirection {
    /// Treated arm, predicted control-risk logit as offset.
    #[default]
    Treated,
    /// Control arm, predicted treated-risk logit as offset and the sign of the effect
    /// flipped. Same targets.
    Control,
}

/// Estimated calibration intercept and slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub intercept: Option<f64>,
    /// `None` when the effect predictor has no variance (intercept-only model fitted).
    pub slope: Option<f64>,
    pub n: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl CalibrationFit {
    pub fn estimates(&self, context: EvalContext) -> [MetricEstimate; 2] {
        let mk = |name, v: Option<f64>, reason: &str| {
            let m = match v {
                Some(v) => MetricEstimate::new(name, context, v),
                None => MetricEstimate::non_estimable(name, context, reason),
            };
            let m = m.with_meta("n", self.n);
            if self.warnings.is_empty() {
                m
            } else {
                m.with_meta("warnings", self.warnings.clone())
            }
        };
        [
            mk(MetricName::CalIntercept, self.intercept, "calibration fit failed"),
            mk(MetricName::CalSlope, self.slope, "zero-variance effect predictions"),
        ]
    }
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    compensated_sum(x.iter().map(|v| (v - m) * (v - m))) / x.len().max(1) as f64
}

/// Offset logistic calibration of predicted effects on the logit scale. Responses may be
/// fractional (known probabilities), which gives the reference estimands.
pub fn ite_calibration(y: &[f64], delta_lp: &[f64], offset: &[f64]) -> Result<CalibrationFit> {
    let n = y.len();
    if delta_lp.len() != n || offset.len() != n {
        return Err(Error::Dimension("y, delta_lp and offset lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::InvalidData("calibration needs at least one individual".into()));
    }
    let mut warnings = Vec::new();
    if n < MIN_ARM_SIZE {
        warnings.push(format!("only {n} individuals in the calibration arm"));
    }
    let slope_estimable = variance(delta_lp) > VARIANCE_EPS;
    let design = if slope_estimable {
        Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { 1.0 } else { delta_lp[i] })
    } else {
        warnings.push("effect predictions have zero variance; slope not estimable".into());
        Array2::ones((n, 1))
    };
    let fit = fit_logistic(design.view(), y, Some(offset), None)?;
    if !fit.converged {
        warnings.push("calibration model did not converge".into());
    }
    if fit.separation {
        warnings.push("separation in calibration model".into());
    }
    Ok(CalibrationFit {
        intercept: Some(fit.coefficients[0]),
        slope: slope_estimable.then(|| fit.coefficients[1]),
        n,
        converged: fit.converged,
        warnings,
    })
}

/// Effect calibration on a trial. `effect` supplies the predicted effects (`delta_lp`)
/// under evaluation; `anchor` supplies the offset (control-risk logits for the treated
/// direction). They can come from different models.
pub fn ite_calibration_on(
    d: &TrialDataset,
    effect: &RiskPredictionSet,
    anchor: &RiskPredictionSet,
    direction: CalibrationDirection,
) -> Result<CalibrationFit> {
    if effect.len() != d.n() || anchor.len() != d.n() {
        return Err(Error::Dimension("predictions are not aligned with the dataset".into()));
    }
    let (arm, sign) = match direction {
        CalibrationDirection::Treated => (Arm::Treated, 1.0),
        CalibrationDirection::Control => (Arm::Control, -1.0),
    };
    let idx = d.arm_indices(arm);
    let y: Vec<f64> = idx.iter().map(|&i| d.y[i]).collect();
    let dl: Vec<f64> = idx.iter().map(|&i| sign * effect.delta_lp[i]).collect();
    let off: Vec<f64> = idx
        .iter()
        .map(|&i| match direction {
            CalibrationDirection::Treated => anchor.lp0[i],
            CalibrationDirection::Control => anchor.lp1[i],
        })
        .collect();
    ite_calibration(&y, &dl, &off)
}

/// Residual calibration for continuous outcomes: OLS of `y - g0` on the predicted effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousCalibration {
    pub intercept: f64,
    pub slope: Option<f64>,
    /// `(predicted effect, residual)` per treated individual, for plotting.
    pub scatter: Vec<(f64, f64)>,
}

pub fn ite_calibration_continuous(
    y_treated: &[f64],
    g0_treated: &[f64],
    delta_treated: &[f64],
) -> Result<ContinuousCalibration> {
    let n = y_treated.len();
    if g0_treated.len() != n || delta_treated.len() != n {
        return Err(Error::Dimension("y, g0 and delta lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::InvalidData("no treated individuals".into()));
    }
    let resid: Vec<f64> = y_treated.iter().zip(g0_treated).map(|(y, g)| y - g).collect();
    let mx = mean(delta_treated);
    let my = mean(&resid);
    let sxx = compensated_sum(delta_treated.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = compensated_sum(delta_treated.iter().zip(&resid).map(|(x, r)| (x - mx) * (r - my)));
    let (intercept, slope) = if sxx / n as f64 > VARIANCE_EPS {
        let b = sxy / sxx;
        (my - b * mx, Some(b))
    } else {
        (my, None)
    };
    Ok(ContinuousCalibration {
        intercept,
        slope,
        scatter: delta_treated.iter().copied().zip(resid).collect(),
    })
}

/// Observed minus predicted average treatment effect:
/// `[mean(y | treated) - mean(y | control)] - [mean(g1 | treated) - mean(g0 | control)]`.
pub fn ate_error(d: &TrialDataset, preds: &RiskPredictionSet) -> Result<f64> {
    if preds.len() != d.n() {
        return Err(Error::Dimension("predictions are not aligned with the dataset".into()));
    }
    let t = d.arm_indices(Arm::Treated);
    let c = d.arm_indices(Arm::Control);
    if t.is_empty() || c.is_empty() {
        return Err(Error::InvalidData("both arms must be non-empty".into()));
    }
    let avg = |idx: &[usize], v: &[f64]| compensated_sum(idx.iter().map(|&i| v[i])) / idx.len() as f64;
    let observed = avg(&t, &d.y) - avg(&c, &d.y);
    let expected = avg(&t, &preds.g1) - avg(&c, &preds.g0);
    Ok(observed - expected)
}

/// Classical logistic recalibration `logit P(y) = b0 + b1 * lp`, optionally within one arm.
pub fn classical_calibration(
    y: &[f64],
    lp: &[f64],
    arm_filter: Option<(&[u8], Arm)>,
) -> Result<(f64, f64)> {
    if y.len() != lp.len() {
        return Err(Error::Dimension("y and lp lengths differ".into()));
    }
    let idx: Vec<usize> = match arm_filter {
        Some((a, arm)) => {
            if a.len() != y.len() {
                return Err(Error::Dimension("arm labels are not aligned".into()));
            }
            (0..y.len()).filter(|&i| a[i] == arm.code()).collect()
        }
        None => (0..y.len()).collect(),
    };
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ls: Vec<f64> = idx.iter().map(|&i| lp[i]).collect();
    if ys.is_empty() || variance(&ls) <= VARIANCE_EPS {
        return Err(Error::InvalidData("linear predictor has zero variance".into()));
    }
    let design = Array2::from_shape_fn((ls.len(), 2), |(i, k)| if k == 0 { 1.0 } else { ls[i] });
    let fit = fit_logistic(design.view(), &ys, None, None)?;
    Ok((fit.coefficients[0], fit.coefficients[1]))
}

/// One quantile group of predicted effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGroup {
    /// Right-closed upper cut-off.
    pub upper: f64,
    pub size: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub mean_delta: Option<f64>,
    /// `mean(y | treated) - mean(y | control)` within the group.
    pub observed_effect: Option<f64>,
    /// Empty group or a missing arm; kept in the output rather than dropped.
    pub flagged: bool,
}

/// Groups by right-closed quantiles of `delta`; individuals tied at a cut-off go to the
/// lower group.
pub fn quantile_group_calibration(
    delta: &[f64],
    y: &[f64],
    a: &[u8],
    n_groups: usize,
) -> Result<Vec<QuantileGroup>> {
    let n = delta.len();
    if y.len() != n || a.len() != n {
        return Err(Error::Dimension("delta, y and a lengths differ".into()));
    }
    if n_groups < 2 {
        return Err(Error::Invalid("need at least two groups".into()));
    }
    if n == 0 || delta.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidData("delta must be non-empty and free of NaN".into()));
    }
    let mut sorted = delta.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..=n_groups)
        .map(|g| sorted[((g * n).div_ceil(n_groups)).max(1) - 1])
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for i in 0..n {
        let g = cuts.partition_point(|&c| c < delta[i]);
        members[g.min(n_groups - 1)].push(i);
    }
    Ok(members
        .into_iter()
        .zip(cuts)
        .map(|(idx, upper)| {
            let t: Vec<usize> = idx.iter().copied().filter(|&i| a[i] == 1).collect();
            let c: Vec<usize> = idx.iter().copied().filter(|&i| a[i] == 0).collect();
            let avg = |s: &[usize], v: &[f64]| compensated_sum(s.iter().map(|&i| v[i])) / s.len() as f64;
            let flagged = t.is_empty() || c.is_empty();
            QuantileGroup {
                upper,
                size: idx.len(),
                n_treated: t.len(),
                n_control: c.len(),
                mean_delta: (!idx.is_empty()).then(|| avg(&idx, delta)),
                observed_effect: (!flagged).then(|| avg(&t, y) - avg(&c, y)),
                flagged,
            }
        })
        .collect())
}

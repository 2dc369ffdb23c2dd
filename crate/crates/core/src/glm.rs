//! Maximum-likelihood logistic regression by IRLS, with offsets, prior weights and
//! fractional (quasi-binomial) responses.
//!
//! The ITE model is a logistic regression on `[1, a, x_1..x_p, a*x_1..a*x_p]`; the same
//! specification minus its treatment-dependent terms gives the control-arm (prognostic)
//! model used for local refits.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{RiskPredictionSet, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::stats::{clamp_prob, expit};

/// Convergence threshold on the absolute change in deviance.
pub const DEVIANCE_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 25;
/// Any |linear predictor| above this at convergence flags (quasi-)separation.
pub const SEPARATION_LP: f64 = 30.0;

const RANK_TOL: f64 = 1e-10;

/// One column of a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "covariate")]
pub enum Term {
    Intercept,
    Treatment,
    Covariate(usize),
    Interaction(usize),
}

impl Term {
    pub fn depends_on_treatment(self) -> bool {
        matches!(self, Term::Treatment | Term::Interaction(_))
    }

    fn value(self, x: ArrayView1<'_, f64>, a: f64) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::Treatment => a,
            Term::Covariate(j) => x[j],
            Term::Interaction(j) => a * x[j],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "(intercept)"),
            Term::Treatment => write!(f, "a"),
            Term::Covariate(j) => write!(f, "x{}", j + 1),
            Term::Interaction(j) => write!(f, "a:x{}", j + 1),
        }
    }
}

/// Ordered list of design terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
}

impl DesignSpec {
    /// Intercept, treatment, all covariate main effects and all treatment interactions.
    pub fn ite(p: usize) -> Self {
        let mut terms = vec![Term::Intercept, Term::Treatment];
        terms.extend((0..p).map(Term::Covariate));
        terms.extend((0..p).map(Term::Interaction));
        DesignSpec { terms }
    }

    /// The same specification with every treatment-dependent term dropped.
    pub fn control_arm(&self) -> Self {
        DesignSpec {
            terms: self
                .terms
                .iter()
                .copied()
                .filter(|t| !t.depends_on_treatment())
                .collect(),
        }
    }

    pub fn includes_treatment_terms(&self) -> bool {
        self.terms.iter().any(|t| t.depends_on_treatment())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.to_string()).collect()
    }

    /// Highest covariate index referenced, plus one.
    pub fn required_covariates(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|t| match t {
                Term::Covariate(j) | Term::Interaction(j) => Some(j.saturating_add(1)),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Design matrix for the given covariates and per-row treatment.
    pub fn build(&self, x: ArrayView2<'_, f64>, a: &[u8]) -> Result<Array2<f64>> {
        if x.nrows() != a.len() {
            return Err(Error::Dimension(format!(
                "X has {} rows, treatment has {}",
                x.nrows(),
                a.len()
            )));
        }
        self.check_covariates(x.ncols())?;
        let mut m = Array2::zeros((x.nrows(), self.len()));
        for (i, row) in x.outer_iter().enumerate() {
            let ai = a[i] as f64;
            for (k, t) in self.terms.iter().enumerate() {
                m[[i, k]] = t.value(row, ai);
            }
        }
        Ok(m)
    }

    fn check_covariates(&self, p: usize) -> Result<()> {
        if self.required_covariates() > p {
            return Err(Error::Dimension(format!(
                "design needs {} covariates, data has {p}",
                self.required_covariates()
            )));
        }
        Ok(())
    }

    fn linear_predictor(&self, coef: &[f64], x: ArrayView1<'_, f64>, a: f64) -> f64 {
        self.terms
            .iter()
            .zip(coef)
            .map(|(t, b)| t.value(x, a) * b)
            .sum()
    }
}

/// Columns `[1, a, x_1..x_p, a*x_1..a*x_p]`.
pub fn build_ite_design(x: ArrayView2<'_, f64>, a: &[u8]) -> Result<Array2<f64>> {
    DesignSpec::ite(x.ncols()).build(x, a)
}

/// Result of an IRLS fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub deviance: f64,
    pub iterations: usize,
    /// Some |linear predictor| exceeded the separation threshold at the final iterate.
    pub separation: bool,
    /// Max-norm of the weighted score at the final iterate.
    pub max_abs_score: f64,
}

fn binomial_deviance(y: &[f64], mu: &[f64], w: Option<&[f64]>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let m = clamp_prob(mu[i]);
        let yi = y[i];
        let mut d = 0.0;
        if yi > 0.0 {
            d += yi * (yi / m).ln();
        }
        if yi < 1.0 {
            d += (1.0 - yi) * ((1.0 - yi) / (1.0 - m)).ln();
        }
        dev += w.map_or(1.0, |w| w[i]) * d;
    }
    2.0 * dev
}

/// Fit `logit(E[y]) = X beta + offset` by IRLS with step halving.
///
/// Responses may be fractional in `[0, 1]`. Converges when the deviance changes by less
/// than [`DEVIANCE_TOL`] or after [`MAX_ITERATIONS`] iterations.
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    offset: Option<&[f64]>,
    weights: Option<&[f64]>,
) -> Result<LogisticFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if offset.is_some_and(|o| o.len() != n) || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension("offset/weights length differs from rows".into()));
    }
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidData(format!("response at row {i} is outside [0, 1]")));
    }
    if let Some(w) = weights {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidData("weights must be finite and non-negative".into()));
        }
    }
    if p == 0 {
        return Err(Error::Dimension("design has no columns".into()));
    }

    let pw = |i: usize| weights.map_or(1.0, |w| w[i]);
    let off = |i: usize| offset.map_or(0.0, |o| o[i]);

    // Rank check on the prior-weighted cross-product.
    let mut xtx = vec![0.0; p * p];
    for (i, row) in x.outer_iter().enumerate() {
        let wi = pw(i);
        if wi == 0.0 {
            continue;
        }
        for r in 0..p {
            let v = wi * row[r];
            for c in 0..=r {
                xtx[r * p + c] += v * row[c];
            }
        }
    }
    symmetrize(&mut xtx, p);
    if let Err(f) = Cholesky::factor(&xtx, p, RANK_TOL) {
        return Err(Error::RankDeficient {
            index: f.column,
            name: format!("column {}", f.column),
        });
    }

    let mut beta = vec![0.0; p];
    let mut eta: Vec<f64> = (0..n).map(off).collect();
    let mut mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut dev = binomial_deviance(y, &mu, weights);
    let mut converged = false;
    let mut iterations = 0;

    let mut h = vec![0.0; p * p];
    let mut g = vec![0.0; p];
    let mut cand_eta = vec![0.0; n];
    let mut cand_mu = vec![0.0; n];

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        h.iter_mut().for_each(|v| *v = 0.0);
        g.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in x.outer_iter().enumerate() {
            let wi = pw(i);
            if wi == 0.0 {
                continue;
            }
            let var = mu[i] * (1.0 - mu[i]);
            let resid = wi * (y[i] - mu[i]);
            for r in 0..p {
                g[r] += resid * row[r];
                let v = wi * var * row[r];
                for c in 0..=r {
                    h[r * p + c] += v * row[c];
                }
            }
        }
        symmetrize(&mut h, p);
        let chol = match Cholesky::factor(&h, p, 1e-14) {
            Ok(c) => c,
            Err(_) => break,
        };
        let mut step = g.clone();
        chol.solve(&mut step);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            for (i, row) in x.outer_iter().enumerate() {
                let mut e = off(i);
                for k in 0..p {
                    e += (beta[k] + scale * step[k]) * row[k];
                }
                cand_eta[i] = e;
                cand_mu[i] = expit(e);
            }
            let cand_dev = binomial_deviance(y, &cand_mu, weights);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-10 * (dev.abs() + 1.0) {
                for k in 0..p {
                    beta[k] += scale * step[k];
                }
                std::mem::swap(&mut eta, &mut cand_eta);
                std::mem::swap(&mut mu, &mut cand_mu);
                let change = (dev - cand_dev).abs();
                dev = cand_dev;
                accepted = true;
                if change < DEVIANCE_TOL {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No descent possible from here: the current iterate is a stationary point to
            // working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let mut score = vec![0.0; p];
    for (i, row) in x.outer_iter().enumerate() {
        let resid = pw(i) * (y[i] - mu[i]);
        for k in 0..p {
            score[k] += resid * row[k];
        }
    }
    let max_abs_score = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let separation = eta.iter().any(|e| e.abs() > SEPARATION_LP);

    Ok(LogisticFit {
        coefficients: beta,
        converged,
        deviance: dev,
        iterations,
        separation,
        max_abs_score,
    })
}

fn symmetrize(m: &mut [f64], p: usize) {
    for r in 0..p {
        for c in (r + 1)..p {
            m[r * p + c] = m[c * p + r];
        }
    }
}

/// A fitted logistic model together with its design specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteModel {
    pub spec: DesignSpec,
    pub fit: LogisticFit,
}

impl IteModel {
    /// Fit `spec` to the observed outcomes of `data`.
    pub fn fit(spec: &DesignSpec, data: &TrialDataset) -> Result<Self> {
        let design = spec.build(data.covariates(), &data.a)?;
        let fit = fit_logistic(design.view(), &data.y, None, None).map_err(|e| match e {
            Error::RankDeficient { index, .. } => Error::RankDeficient {
                index,
                name: spec.terms[index].to_string(),
            },
            other => other,
        })?;
        Ok(IteModel {
            spec: spec.clone(),
            fit,
        })
    }

    /// Fit the control-arm restriction of `spec` to the control individuals of `data`.
    pub fn fit_control_arm(spec: &DesignSpec, data: &TrialDataset) -> Result<Self> {
        let idx = data.arm_indices(crate::data::Arm::Control);
        let controls = data.select(&idx);
        Self::fit(&spec.control_arm(), &controls)
    }

    /// Linear predictors with treatment fixed to `arm_code` for every row.
    pub fn linear_predictors(&self, x: ArrayView2<'_, f64>, arm_code: u8) -> Result<Vec<f64>> {
        self.spec.check_covariates(x.ncols())?;
        let a = arm_code as f64;
        Ok(x.outer_iter()
            .map(|row| self.spec.linear_predictor(&self.fit.coefficients, row, a))
            .collect())
    }
}

/// Predicted risks under control (a = 0) and treatment (a = 1) for every row of `x`.
pub fn predict_potential_risks(model: &IteModel, x: ArrayView2<'_, f64>) -> Result<RiskPredictionSet> {
    if model.fit.coefficients.len() != model.spec.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} terms",
            model.fit.coefficients.len(),
            model.spec.len()
        )));
    }
    let lp0 = model.linear_predictors(x, 0)?;
    let lp1 = model.linear_predictors(x, 1)?;
    RiskPredictionSet::from_logits(lp0, lp1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ite_design_row_layout() {
        let x = array![[1.0, 2.0], [1.0, 2.0]];
        let m = build_ite_design(x.view(), &[0, 1]).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![1.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
        assert_eq!(m.row(1).to_vec(), vec![1.0, 1.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn control_arm_spec_drops_treatment_terms() {
        let spec = DesignSpec::ite(2);
        let c = spec.control_arm();
        assert_eq!(c.terms, vec![Term::Intercept, Term::Covariate(0), Term::Covariate(1)]);
        assert!(!c.includes_treatment_terms());
        assert_eq!(spec.term_names(), vec!["(intercept)", "a", "x1", "x2", "a:x1", "a:x2"]);
    }

    #[test]
    fn intercept_only_balanced_outcome() {
        let x = Array2::ones((10, 1));
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let f = fit_logistic(x.view(), &y, None, None).unwrap();
        assert!(f.converged);
        assert!(f.coefficients[0].abs() < 1e-8);
    }

    #[test]
    fn intercept_only_with_true_offset_absorbs_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let off: Vec<f64> = (0..n)
            .map(|_| -0.5 + 1.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = off
            .iter()
            .map(|&o| (rng.random::<f64>() < expit(o)) as u8 as f64)
            .collect();
        let x = Array2::ones((n, 1));
        let f = fit_logistic(x.view(), &y, Some(&off), None).unwrap();
        assert!(f.converged);
        assert!(f.coefficients[0].abs() < 0.05, "{:?}", f.coefficients);
    }

    #[test]
    fn rank_deficiency_names_the_column() {
        let x = array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 3.0, 1.0]];
        let err = fit_logistic(x.view(), &[0.0, 1.0, 0.0, 1.0], None, None).unwrap_err();
        match err {
            Error::RankDeficient { index, .. } => assert_eq!(index, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rank_deficiency_through_model_uses_term_name() {
        // x2 duplicates x1.
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.5, 0.5], [1.5, 1.5], [3.0, 3.0]];
        let d = TrialDataset::new(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0], vec![0, 0, 0, 1, 1, 1], x)
            .unwrap();
        let err = IteModel::fit(&DesignSpec::ite(2), &d).unwrap_err();
        assert!(err.to_string().contains("x2"), "{err}");
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        let x = array![[1.0, -2.0], [1.0, -1.0], [1.0, 1.0], [1.0, 2.0]];
        let f = fit_logistic(x.view(), &[0.0, 0.0, 1.0, 1.0], None, None).unwrap();
        assert!(f.separation);
    }

    #[test]
    fn rejects_out_of_range_responses() {
        let x = Array2::ones((2, 1));
        assert!(fit_logistic(x.view(), &[0.0, 1.5], None, None).is_err());
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let model = IteModel {
            spec: DesignSpec::ite(2),
            fit: LogisticFit {
                coefficients: vec![0.0; 6],
                converged: true,
                deviance: 0.0,
                iterations: 0,
                separation: false,
                max_abs_score: 0.0,
            },
        };
        let x = array![[0.3, -1.0], [2.0, 1.0]];
        let p = predict_potential_risks(&model, x.view()).unwrap();
        assert!(p.g0.iter().chain(&p.g1).all(|&g| g == 0.5));
        assert!(p.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn true_dgm_coefficients_at_origin() {
        let model = IteModel {
            spec: DesignSpec::ite(2),
            fit: LogisticFit {
                coefficients: vec![-1.0, -0.75, 1.0, 0.0, 0.0, 0.5],
                converged: true,
                deviance: 0.0,
                iterations: 0,
                separation: false,
                max_abs_score: 0.0,
            },
        };
        let p = predict_potential_risks(&model, array![[0.0, 0.0]].view()).unwrap();
        assert!((p.g0[0] - 0.268_941_421_369_995).abs() < 1e-12);
        assert!((p.g1[0] - 0.148_047_198_031_689).abs() < 1e-12);
    }

    #[test]
    fn control_arm_model_predicts_same_risk_for_both_arms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |_| rng.sample(StandardNormal));
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (rng.random::<f64>() < expit(-0.5 + x[[i, 0]])) as u8 as f64)
            .collect();
        let d = TrialDataset::new(y, a, x).unwrap();
        let m = IteModel::fit_control_arm(&DesignSpec::ite(2), &d).unwrap();
        assert_eq!(m.spec.len(), 3);
        let p = predict_potential_risks(&m, d.covariates()).unwrap();
        assert_eq!(p.g0, p.g1);
    }
}

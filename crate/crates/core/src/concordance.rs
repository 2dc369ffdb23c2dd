//! Discrimination statistics for predicted treatment effects.
//!
//! Every ITE concordance here is the same Harrell-type quantity
//!
//! ```text
//!   sum_{k != l} [ I(s_k < s_l) + 1/2 I(s_k = s_l) ] P(d_k < d_l)
//!   -------------------------------------------------------------
//!                  sum_{k != l} P(d_k < d_l)
//! ```
//!
//! where `s` is the predicted risk difference (lower = more predicted benefit) and
//! `d = Y(1) - Y(0)` is the potential-outcome difference, whose law per unit is given by
//! an [`EffectLaw`]. The model-based c-for-benefit plugs in model probabilities, the
//! realized-outcome reference plugs in 0/1 indicators, and the matched c-for-benefit
//! treats each matched pair as one unit with `Y(0)` from the control and `Y(1)` from the
//! treated member (so `d = -O` with `O = Y_control - Y_treated`).
//!
//! Because `P(d_k < d_l)` factorizes over the three values of `d`, the double sum is
//! evaluated by one sort and a prefix-sum sweep in `O(n log n)`.

use serde::{Deserialize, Serialize};

use crate::data::{Arm, EvalContext, MetricEstimate, MetricName, RiskPredictionSet, TrialDataset};
use crate::error::{Error, Result};
use crate::matching::{balance_subsample, match_pairs, subsample_positions, MatchMode, MatchSide, MatchSpec};
use crate::stats::{compensated_sum, CompensatedSum};

/// Subsample repeats for unequal arms at top level.
pub const DEFAULT_REPEATS: usize = 1000;

/// Distribution of `d = Y(1) - Y(0)` for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectLaw {
    /// `P(Y(0) = 1, Y(1) = 0)`: treatment prevents the event.
    pub benefit: f64,
    /// `P(Y(0) = Y(1))`.
    pub neutral: f64,
    /// `P(Y(0) = 0, Y(1) = 1)`: treatment causes the event.
    pub harm: f64,
}

impl EffectLaw {
    /// Independent potential outcomes with event probabilities `g0`, `g1`.
    pub fn from_risks(g0: f64, g1: f64) -> Self {
        EffectLaw {
            benefit: g0 * (1.0 - g1),
            neutral: g0 * g1 + (1.0 - g0) * (1.0 - g1),
            harm: g1 * (1.0 - g0),
        }
    }

    /// Degenerate law of realized outcomes.
    pub fn realized(y0: u8, y1: u8) -> Self {
        Self::from_risks(y0 as f64, y1 as f64)
    }

    #[inline]
    fn not_benefit(&self) -> f64 {
        self.neutral + self.harm
    }
}

/// `P_benefit,k,l`: probability that `k`'s potential-outcome pattern shows more benefit
/// than `l`'s, as the sum of the five concordant patterns. `P_harm,k,l` is this function
/// with `k` and `l` swapped.
pub fn pair_benefit_prob(g0_k: f64, g1_k: f64, g0_l: f64, g1_l: f64) -> f64 {
    let k_benefit = (1.0 - g1_k) * g0_k;
    let k_none_00 = (1.0 - g1_k) * (1.0 - g0_k);
    let k_none_11 = g1_k * g0_k;
    let l_none_00 = (1.0 - g1_l) * (1.0 - g0_l);
    let l_none_11 = g1_l * g0_l;
    let l_harm = g1_l * (1.0 - g0_l);
    k_benefit * l_none_00
        + k_benefit * l_none_11
        + k_benefit * l_harm
        + k_none_00 * l_harm
        + k_none_11 * l_harm
}

/// Sums behind one concordance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConcordanceSums {
    /// `sum I(s_k < s_l) P(d_k < d_l)`
    pub strict: f64,
    /// `sum I(s_k = s_l) P(d_k < d_l)` over ordered pairs `k != l`
    pub tied: f64,
    /// `sum P(d_k < d_l)` over ordered pairs `k != l`
    pub denominator: f64,
}

impl ConcordanceSums {
    /// Tie-tolerant concordance, `None` without benefit-ordered mass.
    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0.0).then(|| ((self.strict + 0.5 * self.tied) / self.denominator).clamp(0.0, 1.0))
    }

    /// The benefit-plus-harm form, which ignores pairs with tied predictions.
    pub fn value_excluding_ties(&self) -> Option<f64> {
        (self.denominator > 0.0).then(|| (self.strict / self.denominator).clamp(0.0, 1.0))
    }
}

/// Group-level sums for the all-pairs part of the formula.
#[derive(Default)]
struct GroupSums {
    benefit: CompensatedSum,
    not_benefit: CompensatedSum,
    neutral: CompensatedSum,
    harm: CompensatedSum,
    self_benefit: CompensatedSum,
    self_neutral: CompensatedSum,
}

impl GroupSums {
    fn push(&mut self, e: &EffectLaw) {
        self.benefit.add(e.benefit);
        self.not_benefit.add(e.not_benefit());
        self.neutral.add(e.neutral);
        self.harm.add(e.harm);
        self.self_benefit.add(e.benefit * e.not_benefit());
        self.self_neutral.add(e.neutral * e.harm);
    }

    /// `sum_{k != l in group} P(d_k < d_l)`
    fn off_diagonal(&self) -> f64 {
        self.benefit.value() * self.not_benefit.value() - self.self_benefit.value()
            + self.neutral.value() * self.harm.value()
            - self.self_neutral.value()
    }
}

/// Evaluate the concordance sums for scores `s` and per-unit effect laws.
pub fn benefit_concordance(scores: &[f64], laws: &[EffectLaw]) -> ConcordanceSums {
    assert_eq!(scores.len(), laws.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut all = GroupSums::default();
    let mut below_benefit = CompensatedSum::new();
    let mut below_neutral = CompensatedSum::new();
    let mut strict = CompensatedSum::new();
    let mut tied = CompensatedSum::new();

    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == s {
            end += 1;
        }
        let (bb, bn) = (below_benefit.value(), below_neutral.value());
        let mut group = GroupSums::default();
        for &l in &order[start..end] {
            let e = &laws[l];
            strict.add(bb * e.not_benefit());
            strict.add(bn * e.harm);
            group.push(e);
            all.push(e);
        }
        tied.add(group.off_diagonal());
        for &k in &order[start..end] {
            below_benefit.add(laws[k].benefit);
            below_neutral.add(laws[k].neutral);
        }
        start = end;
    }

    ConcordanceSums {
        strict: strict.value(),
        tied: tied.value(),
        denominator: all.off_diagonal(),
    }
}

fn risk_laws(g0: &[f64], g1: &[f64]) -> Vec<EffectLaw> {
    g0.iter().zip(g1).map(|(&a, &b)| EffectLaw::from_risks(a, b)).collect()
}

/// Model-based c-for-benefit. `delta` supplies the predictions being evaluated;
/// `benefit_source` supplies the potential-outcome risks behind `P_benefit`. The two may
/// come from different models (validation use).
pub fn mbcb(delta: &[f64], benefit_source: &RiskPredictionSet) -> Result<MetricEstimate> {
    if delta.len() != benefit_source.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} benefit probabilities",
            delta.len(),
            benefit_source.len()
        )));
    }
    let n = delta.len();
    if n < 2 {
        return Ok(MetricEstimate::non_estimable(MetricName::Mbcb, EvalContext::Apparent, "fewer than two individuals"));
    }
    let sums = benefit_concordance(delta, &risk_laws(&benefit_source.g0, &benefit_source.g1));
    Ok(finish(MetricName::Mbcb, sums, "no benefit probability mass")
        .with_meta("n", n)
        .with_meta("benefit_mass_per_pair", sums.denominator / (n as f64 * (n as f64 - 1.0)))
        .with_meta(
            "concordance_excluding_ties",
            sums.value_excluding_ties().map_or(serde_json::Value::Null, Into::into),
        ))
}

/// Concordance with realized potential-outcome differences (`ben_kl` indicators).
pub fn c_delta_ben(delta: &[f64], y0: &[u8], y1: &[u8]) -> Result<MetricEstimate> {
    if delta.len() != y0.len() || y0.len() != y1.len() {
        return Err(Error::Dimension("delta, y0 and y1 lengths differ".into()));
    }
    if y0.iter().chain(y1).any(|&v| v > 1) {
        return Err(Error::InvalidData("potential outcomes must be 0 or 1".into()));
    }
    let mut units: Vec<(f64, u8)> = delta
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(&s, (&a, &b))| (s, realized_kind(a as f64, b as f64)))
        .collect();
    let sums = realized_concordance(&mut units);
    Ok(finish(MetricName::Mbcb, sums, "no benefit-ordered pair")
        .in_context(EvalContext::PopulationReference)
        .with_meta("n", delta.len())
        .with_meta("benefit_ordered_pairs", sums.denominator))
}

fn finish(name: MetricName, sums: ConcordanceSums, reason: &str) -> MetricEstimate {
    match sums.value() {
        Some(v) => MetricEstimate::new(name, EvalContext::Apparent, v),
        None => MetricEstimate::non_estimable(name, EvalContext::Apparent, reason),
    }
}

/// How a matched pair is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairScore {
    /// Mean of both members' predicted effects.
    PairMean,
    /// Predicted effect of the treated member.
    TreatedMember,
}

/// Matched concordance for one balanced subset: returns `None` if no pair-pairs differ
/// in observed outcome.
fn matched_once(
    d: &TrialDataset,
    subset: &[usize],
    delta: &[f64],
    match_score: &[f64],
    spec: &MatchSpec,
    score: PairScore,
) -> Result<(Option<f64>, usize)> {
    let controls: Vec<usize> = subset.iter().copied().filter(|&i| d.a[i] == Arm::Control.code()).collect();
    let treated: Vec<usize> = subset.iter().copied().filter(|&i| d.a[i] == Arm::Treated.code()).collect();
    let matched = match spec.mode {
        MatchMode::Scalar => {
            let cs: Vec<f64> = controls.iter().map(|&i| match_score[i]).collect();
            let ts: Vec<f64> = treated.iter().map(|&i| match_score[i]).collect();
            match_pairs(spec, MatchSide::Scores(&cs), MatchSide::Scores(&ts))?
        }
        MatchMode::Mahalanobis => {
            let xc = d.x.select(ndarray::Axis(0), &controls);
            let xt = d.x.select(ndarray::Axis(0), &treated);
            match_pairs(spec, MatchSide::Covariates(xc.view()), MatchSide::Covariates(xt.view()))?
        }
    };
    let mut scores = Vec::with_capacity(matched.pairs.len());
    let mut laws = Vec::with_capacity(matched.pairs.len());
    for &(ci, ti) in &matched.pairs {
        let (i, j) = (controls[ci], treated[ti]);
        scores.push(match score {
            PairScore::PairMean => (delta[i] + delta[j]) / 2.0,
            PairScore::TreatedMember => delta[j],
        });
        laws.push(EffectLaw::realized(d.y[i] as u8, d.y[j] as u8));
    }
    Ok((benefit_concordance(&scores, &laws).value(), matched.pairs.len()))
}

fn matched_concordance(
    name: MetricName,
    d: &TrialDataset,
    delta: &[f64],
    match_score: &[f64],
    spec: &MatchSpec,
    repeats: usize,
    score: PairScore,
) -> Result<MetricEstimate> {
    if d.outcome_kind != crate::data::OutcomeKind::Binary {
        return Err(Error::Invalid("matched c-for-benefit requires binary outcomes".into()));
    }
    if delta.len() != d.n() || match_score.len() != d.n() {
        return Err(Error::Dimension("predictions are not aligned with the dataset".into()));
    }
    if spec.mode == MatchMode::Scalar {
        return Ok(scalar_matched_concordance(name, d, delta, match_score, spec, repeats, score));
    }
    subsampled_concordance(name, d, delta, match_score, spec, repeats, score)
}

/// Match each balanced subsample from scratch.
fn subsampled_concordance(
    name: MetricName,
    d: &TrialDataset,
    delta: &[f64],
    match_score: &[f64],
    spec: &MatchSpec,
    repeats: usize,
    score: PairScore,
) -> Result<MetricEstimate> {
    let sets = balance_subsample(d, spec.seed, repeats);
    let mut values = Vec::with_capacity(sets.len());
    let mut pairs = 0;
    for set in &sets {
        let (v, np) = matched_once(d, set, delta, match_score, spec, score)?;
        pairs = np;
        if let Some(v) = v {
            values.push(v);
        }
    }
    let est = if values.is_empty() {
        MetricEstimate::non_estimable(name, EvalContext::Apparent, "no matched pairs with unequal observed benefit")
    } else {
        MetricEstimate::new(name, EvalContext::Apparent, compensated_sum(values.iter().copied()) / values.len() as f64)
    };
    Ok(est
        .with_meta("pairs", pairs)
        .with_meta("subsample_repeats", sets.len())
        .with_meta("estimable_repeats", values.len()))
}

/// Realized-outcome concordance with integer bookkeeping; `kind` is 0 for benefit, 1
/// for no effect and 2 for harm. Same result as [`benefit_concordance`] with 0/1 laws.
fn realized_concordance(units: &mut [(f64, u8)]) -> ConcordanceSums {
    units.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let (mut below_b, mut below_n) = (0u64, 0u64);
    let (mut strict, mut tied) = (0u64, 0u64);
    let mut total = [0u64; 3];
    let mut start = 0;
    while start < units.len() {
        let s = units[start].0;
        let mut end = start + 1;
        while end < units.len() && units[end].0 == s {
            end += 1;
        }
        let mut g = [0u64; 3];
        for &(_, k) in &units[start..end] {
            g[k as usize] += 1;
        }
        strict += below_b * (g[1] + g[2]) + below_n * g[2];
        tied += g[0] * (g[1] + g[2]) + g[1] * g[2];
        (0..3).for_each(|k| total[k] += g[k]);
        below_b += g[0];
        below_n += g[1];
        start = end;
    }
    ConcordanceSums {
        strict: strict as f64,
        tied: tied as f64,
        denominator: (total[0] * (total[1] + total[2]) + total[1] * total[2]) as f64,
    }
}

fn realized_kind(y_control: f64, y_treated: f64) -> u8 {
    match (y_control > 0.5, y_treated > 0.5) {
        (true, false) => 0,
        (false, true) => 2,
        _ => 1,
    }
}

/// Scalar-score matching with both arms sorted once. Subsampling the larger arm and
/// walking it in sorted order gives the same rank pairing (ties broken by index) as
/// matching each subsample from scratch.
fn scalar_matched_concordance(
    name: MetricName,
    d: &TrialDataset,
    delta: &[f64],
    match_score: &[f64],
    spec: &MatchSpec,
    repeats: usize,
    score: PairScore,
) -> MetricEstimate {
    let sorted = |arm: Arm| {
        let idx = d.arm_indices(arm);
        // Positions into the index-ordered arm list, sorted by score.
        let mut pos: Vec<usize> = (0..idx.len()).collect();
        pos.sort_by(|&a, &b| match_score[idx[a]].total_cmp(&match_score[idx[b]]).then(a.cmp(&b)));
        let by_score = pos.iter().map(|&p| idx[p]).collect::<Vec<_>>();
        (by_score, pos)
    };
    let (controls, control_pos) = sorted(Arm::Control);
    let (treated, treated_pos) = sorted(Arm::Treated);
    let control_is_small = controls.len() < treated.len();
    let (small_len, large_len) = if control_is_small {
        (controls.len(), treated.len())
    } else {
        (treated.len(), controls.len())
    };
    let draws = subsample_positions(small_len, large_len, spec.seed, repeats);
    let n_sets = draws.as_ref().map_or(1, Vec::len);

    let pair_unit = |i: usize, j: usize| {
        let s = match score {
            PairScore::PairMean => (delta[i] + delta[j]) / 2.0,
            PairScore::TreatedMember => delta[j],
        };
        (s, realized_kind(d.y[i], d.y[j]))
    };
    let mut values = Vec::with_capacity(n_sets);
    let mut units = Vec::with_capacity(small_len);
    let mut chosen = vec![false; large_len];
    for r in 0..n_sets {
        units.clear();
        match &draws {
            None => units.extend(controls.iter().zip(&treated).map(|(&i, &j)| pair_unit(i, j))),
            Some(draws) => {
                chosen.iter_mut().for_each(|c| *c = false);
                draws[r].iter().for_each(|&k| chosen[k] = true);
                let (large, large_pos) = if control_is_small {
                    (&treated, &treated_pos)
                } else {
                    (&controls, &control_pos)
                };
                let kept = large.iter().zip(large_pos).filter(|(_, &p)| chosen[p]).map(|(&i, _)| i);
                if control_is_small {
                    units.extend(controls.iter().zip(kept).map(|(&i, j)| pair_unit(i, j)));
                } else {
                    units.extend(kept.zip(&treated).map(|(i, &j)| pair_unit(i, j)));
                }
            }
        }
        if let Some(v) = realized_concordance(&mut units).value() {
            values.push(v);
        }
    }
    let est = if values.is_empty() {
        MetricEstimate::non_estimable(name, EvalContext::Apparent, "no matched pairs with unequal observed benefit")
    } else {
        MetricEstimate::new(name, EvalContext::Apparent, compensated_sum(values.iter().copied()) / values.len() as f64)
    };
    est.with_meta("pairs", small_len)
        .with_meta("subsample_repeats", n_sets)
        .with_meta("estimable_repeats", values.len())
}

/// c-for-benefit with 1:1 matching on predicted effect; each pair is scored by the mean
/// predicted effect of its members. Unequal arms are handled by averaging over
/// `repeats` random subsamples of the larger arm.
pub fn cben_delta(
    d: &TrialDataset,
    preds: &RiskPredictionSet,
    spec: &MatchSpec,
    repeats: usize,
) -> Result<MetricEstimate> {
    matched_concordance(MetricName::CbenDelta, d, &preds.delta, &preds.delta, spec, repeats, PairScore::PairMean)
}

/// c-for-benefit with 1:1 matching on predicted control risk from `preds_for_matching`;
/// each pair is scored by the treated member's effect from `preds_for_delta`.
pub fn cben_y0(
    d: &TrialDataset,
    preds_for_delta: &RiskPredictionSet,
    preds_for_matching: &RiskPredictionSet,
    spec: &MatchSpec,
    repeats: usize,
) -> Result<MetricEstimate> {
    matched_concordance(
        MetricName::CbenY0,
        d,
        &preds_for_delta.delta,
        &preds_for_matching.g0,
        spec,
        repeats,
        PairScore::TreatedMember,
    )
}

/// Outcome-level c-statistic: probability that an event has a higher predicted risk than
/// a non-event, ties counting one half.
pub fn c_outcome(y: &[f64], risk: &[f64]) -> Result<MetricEstimate> {
    if y.len() != risk.len() {
        return Err(Error::Dimension("y and risk lengths differ".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData("c-statistic requires binary outcomes".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| risk[a].total_cmp(&risk[b]));
    let (mut below_nonevents, mut conc, mut ties) = (0u64, 0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let r = risk[order[start]];
        let mut end = start + 1;
        while end < order.len() && risk[order[end]] == r {
            end += 1;
        }
        let events = order[start..end].iter().filter(|&&i| y[i] == 1.0).count() as u64;
        let nonevents = (end - start) as u64 - events;
        conc += events * below_nonevents;
        ties += events * nonevents;
        below_nonevents += nonevents;
        start = end;
    }
    let n_events = y.iter().filter(|&&v| v == 1.0).count() as u64;
    let usable = n_events * (y.len() as u64 - n_events);
    if usable == 0 {
        return Ok(MetricEstimate::non_estimable(MetricName::COutcome, EvalContext::Apparent, "all outcomes equal"));
    }
    Ok(MetricEstimate::new(
        MetricName::COutcome,
        EvalContext::Apparent,
        (conc as f64 + 0.5 * ties as f64) / usable as f64,
    )
    .with_meta("usable_pairs", usable))
}

/// Mean squared difference between predicted risk and outcome.
pub fn brier(y: &[f64], risk: &[f64]) -> Result<MetricEstimate> {
    if y.len() != risk.len() || y.is_empty() {
        return Err(Error::Dimension("y and risk must be non-empty and aligned".into()));
    }
    let ss = compensated_sum(y.iter().zip(risk).map(|(a, b)| (a - b) * (a - b)));
    Ok(MetricEstimate::new(MetricName::Brier, EvalContext::Apparent, ss / y.len() as f64))
}

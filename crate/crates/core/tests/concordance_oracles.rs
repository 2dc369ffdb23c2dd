mod common;

use common::*;
use itval_core::concordance::*;
use itval_core::data::{RiskPredictionSet, TrialDataset};
use itval_core::matching::{MatchAlgorithm, MatchMode, MatchSpec};
use ndarray::Array2;
use rand::Rng;

fn brute_mbcb(delta: &[f64], g0: &[f64], g1: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..delta.len() {
        for l in 0..delta.len() {
            if k != l {
                let (p, _, _) = enumerate_patterns(g0[k], g1[k], g0[l], g1[l]);
                num += rank_credit(delta[k], delta[l]) * p;
                den += p;
            }
        }
    }
    num / den
}

#[test]
fn pattern_probability_against_enumeration() {
    let mut r = rng(1);
    for _ in 0..2000 {
        let (a, b, c, d) = (prob(&mut r), prob(&mut r), prob(&mut r), prob(&mut r));
        let (ben, harm, none) = enumerate_patterns(a, b, c, d);
        let p_ben = pair_benefit_prob(a, b, c, d);
        let p_harm = pair_benefit_prob(c, d, a, b);
        assert!((p_ben - ben).abs() < 1e-14);
        assert!((p_harm - harm).abs() < 1e-14);
        assert!((p_ben + p_harm + none - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn pattern_probability_for_one_individual_with_itself() {
    // Joint probabilities 0.6 / 0.15 / 0.2 / 0.05 for (Y0, Y1) = 00 / 01 / 10 / 11.
    let (ben, _, _) = enumerate_patterns(0.25, 0.20, 0.25, 0.20);
    let p = pair_benefit_prob(0.25, 0.20, 0.25, 0.20);
    assert!((p - ben).abs() < 1e-15);
    assert!((p - 0.2575).abs() < 1e-12, "{p}");
    assert_eq!(pair_benefit_prob(1.0, 0.0, 0.0, 0.0), 1.0);
}

#[test]
fn mbcb_matches_brute_force() {
    let mut r = rng(2);
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let g0: Vec<f64> = (0..n).map(|_| prob(&mut r)).collect();
        let g1: Vec<f64> = (0..n).map(|_| prob(&mut r)).collect();
        // Coarse grid to force tied predictions.
        let delta: Vec<f64> = (0..n).map(|_| (r.random_range(-4..=4) as f64) / 8.0).collect();
        let preds = RiskPredictionSet::from_probs(g0.clone(), g1.clone()).unwrap();
        let fast = mbcb(&delta, &preds).unwrap();
        let oracle = brute_mbcb(&delta, &preds.g0, &preds.g1);
        match fast.value {
            Some(v) => assert!((v - oracle).abs() <= 1e-12, "{v} vs {oracle}"),
            None => assert!(oracle.is_nan()),
        }
    }
}

#[test]
fn mbcb_rank_invariance_and_reversal() {
    let mut r = rng(3);
    for _ in 0..50 {
        let n = 30;
        let g0: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        let g1: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        let preds = RiskPredictionSet::from_probs(g0, g1).unwrap();
        let delta: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let base = mbcb(&delta, &preds).unwrap().value.unwrap();
        let warped: Vec<f64> = delta.iter().map(|d| (3.0 * d).exp() + d).collect();
        assert!((mbcb(&warped, &preds).unwrap().value.unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = delta.iter().map(|d| -d).collect();
        assert!((mbcb(&flipped, &preds).unwrap().value.unwrap() - (1.0 - base)).abs() < 1e-12);
    }
}

#[test]
fn realized_reference_matches_brute_force() {
    let mut r = rng(4);
    for _ in 0..100 {
        let n = r.random_range(2..=60);
        let y0: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let y1: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let delta: Vec<f64> = (0..n).map(|_| r.random_range(-3..=3) as f64).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                let ben = (y1[k] as i32 - y0[k] as i32) < (y1[l] as i32 - y0[l] as i32);
                if k != l && ben {
                    num += rank_credit(delta[k], delta[l]);
                    den += 1.0;
                }
            }
        }
        let v = c_delta_ben(&delta, &y0, &y1).unwrap().value;
        if den == 0.0 {
            assert!(v.is_none());
        } else {
            assert!((v.unwrap() - num / den).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_realized_effect_is_non_estimable() {
    let v = c_delta_ben(&[0.1, 0.2, 0.3], &[1, 0, 1], &[1, 0, 1]).unwrap();
    assert!(v.value.is_none());
}

#[test]
fn redraw_average_equals_sample_reference() {
    // Expectation over potential-outcome redraws of the realized-outcome statistic.
    let pop = dgm1(100, 5);
    let delta: Vec<f64> = pop.p1.iter().zip(&pop.p0).map(|(a, b)| a - b).collect();
    let truth = pop.truth().unwrap();
    let reference = mbcb(&delta, &truth).unwrap().value.unwrap();
    let mut r = rng(6);
    let draws = 2000;
    let mut sum = 0.0;
    for _ in 0..draws {
        let y0: Vec<u8> = pop.p0.iter().map(|&p| u8::from(r.random::<f64>() < p)).collect();
        let y1: Vec<u8> = pop.p1.iter().map(|&p| u8::from(r.random::<f64>() < p)).collect();
        sum += c_delta_ben(&delta, &y0, &y1).unwrap().value.unwrap();
    }
    let avg = sum / draws as f64;
    assert!((avg - reference).abs() <= 0.005, "{avg} vs {reference}");
}

/// Pairs by sorted score (index breaks ties), then Harrell's c between predicted benefit
/// `-s` and observed benefit `O = y_control - y_treated` over pair-pairs with unequal O.
fn brute_cben(controls: &[(f64, f64, f64)], treated: &[(f64, f64, f64)], treated_only: bool) -> Option<f64> {
    // (match score, delta, y)
    let order = |v: &[(f64, f64, f64)]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].0.partial_cmp(&v[b].0).unwrap().then(a.cmp(&b)));
        idx
    };
    let pairs: Vec<(f64, f64)> = order(controls)
        .into_iter()
        .zip(order(treated))
        .map(|(i, j)| {
            let s = if treated_only { treated[j].1 } else { (controls[i].1 + treated[j].1) / 2.0 };
            (s, controls[i].2 - treated[j].2)
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for p in &pairs {
        for q in &pairs {
            if p.1 > q.1 {
                den += 1.0;
                num += rank_credit(p.0, q.0);
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn matched_statistics_match_brute_force_on_balanced_arms() {
    let mut r = rng(7);
    for trial in 0..60 {
        let m = r.random_range(2..=25);
        let n = 2 * m;
        let a: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
        let g0: Vec<f64> = (0..n).map(|_| (r.random_range(1..20) as f64) / 20.0).collect();
        let g1: Vec<f64> = (0..n).map(|_| (r.random_range(1..20) as f64) / 20.0).collect();
        let preds = RiskPredictionSet::from_probs(g0, g1).unwrap();
        let d = TrialDataset::new(y.clone(), a.clone(), Array2::zeros((n, 1))).unwrap();
        let side = |arm: u8, score: &[f64]| -> Vec<(f64, f64, f64)> {
            (0..n).filter(|&i| a[i] == arm).map(|i| (score[i], preds.delta[i], y[i])).collect()
        };
        let algorithm = if trial % 2 == 0 { MatchAlgorithm::Optimal } else { MatchAlgorithm::Greedy };
        let spec = MatchSpec {
            mode: MatchMode::Scalar,
            algorithm,
            seed: 1,
        };
        let got = cben_delta(&d, &preds, &spec, 10).unwrap().value;
        let want = brute_cben(&side(0, &preds.delta), &side(1, &preds.delta), false);
        assert_eq!(got.is_some(), want.is_some());
        if let (Some(g), Some(w)) = (got, want) {
            assert!((g - w).abs() < 1e-12);
        }
        let got = cben_y0(&d, &preds, &preds, &spec, 10).unwrap().value;
        let want = brute_cben(&side(0, &preds.g0), &side(1, &preds.g0), true);
        if let (Some(g), Some(w)) = (got, want) {
            assert!((g - w).abs() < 1e-12);
        } else {
            assert_eq!(got.is_some(), want.is_some());
        }
    }
}

#[test]
fn perfectly_matched_twins_recover_the_sample_reference() {
    // Each control has a treated twin with identical covariates, and the model is the
    // truth, so each matched pair carries exactly the twins' potential-outcome law.
    let twins = dgm1(300, 8);
    let m = twins.len();
    let n = 2 * m;
    let a: Vec<u8> = (0..n).map(|i| u8::from(i >= m)).collect();
    let p0: Vec<f64> = (0..n).map(|i| twins.p0[i % m]).collect();
    let p1: Vec<f64> = (0..n).map(|i| twins.p1[i % m]).collect();
    let preds = RiskPredictionSet::from_probs(p0.clone(), p1.clone()).unwrap();
    let reference = mbcb(&twins.p1.iter().zip(&twins.p0).map(|(a, b)| a - b).collect::<Vec<_>>(), &twins.truth().unwrap())
        .unwrap()
        .value
        .unwrap();
    let mut r = rng(9);
    let draws = 400;
    let mut sum = 0.0;
    for _ in 0..draws {
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = if a[i] == 1 { p1[i] } else { p0[i] };
                (r.random::<f64>() < p) as u8 as f64
            })
            .collect();
        let d = TrialDataset::new(y, a.clone(), Array2::zeros((n, 1))).unwrap();
        sum += cben_y0(&d, &preds, &preds, &MatchSpec::default(), 1).unwrap().value.unwrap();
    }
    let avg = sum / draws as f64;
    assert!((avg - reference).abs() < 0.006, "{avg} vs {reference}");
}

#[test]
fn outcome_c_statistic_matches_brute_force() {
    let mut r = rng(10);
    let n = 200;
    let y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    let risk: Vec<f64> = (0..n).map(|_| (r.random_range(0..30) as f64) / 30.0).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if y[i] == 1.0 && y[j] == 0.0 {
                den += 1.0;
                num += rank_credit(risk[j], risk[i]);
            }
        }
    }
    let c = c_outcome(&y, &risk).unwrap().value.unwrap();
    assert!((c - num / den).abs() <= 1e-12);
    assert!(c_outcome(&[1.0, 1.0], &[0.2, 0.3]).unwrap().value.is_none());
    let b = brier(&y, &vec![0.5; n]).unwrap().value.unwrap();
    assert!((b - 0.25).abs() < 1e-15);
}

#[test]
fn unbalanced_arms_average_over_subsamples() {
    let mut r = rng(11);
    let n = 41;
    let a: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
    let y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    let preds = RiskPredictionSet::from_probs(
        (0..n).map(|_| r.random_range(0.1..0.9)).collect(),
        (0..n).map(|_| r.random_range(0.1..0.9)).collect(),
    )
    .unwrap();
    let d = TrialDataset::new(y, a, Array2::zeros((n, 1))).unwrap();
    let spec = MatchSpec::default();
    let e = cben_delta(&d, &preds, &spec, 25).unwrap();
    assert_eq!(e.meta["subsample_repeats"], 25);
    assert_eq!(e.meta["pairs"], 14);
    // Same seed, same answer; different seed, generally a different one.
    assert_eq!(cben_delta(&d, &preds, &spec, 25).unwrap().value, e.value);
    let other = MatchSpec { seed: 99, ..spec };
    assert_ne!(cben_delta(&d, &preds, &other, 25).unwrap().value, e.value);
}

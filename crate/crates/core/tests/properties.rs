use itval_core::concordance::mbcb;
use itval_core::data::{RiskPredictionSet, TrialDataset};
use itval_core::io::{parse_trial_csv, write_trial_csv, TrialSchema};
use itval_core::report::{round_sig, to_json};
use itval_core::resampling::plus632_combine;
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #[test]
    fn plus632_weights_are_bounded(app in 0.0..1.0f64, oos in 0.0..1.0f64, gamma in prop::sample::select(vec![0.0, 0.5])) {
        let c = plus632_combine(app, oos, gamma);
        prop_assert!((0.0..=1.0).contains(&c.r));
        prop_assert!(c.w >= 0.632 - 1e-15 && c.w <= 1.0 + 1e-15);
        let (lo, hi) = if app < c.oos_clipped { (app, c.oos_clipped) } else { (c.oos_clipped, app) };
        prop_assert!(c.value >= lo - 1e-12 && c.value <= hi + 1e-12);
    }

    #[test]
    fn mbcb_depends_on_ranks_only(
        rows in prop::collection::vec((0.01..0.99f64, 0.01..0.99f64, -3.0..3.0f64), 2..40),
        scale in 0.1..10.0f64,
        shift in -5.0..5.0f64,
    ) {
        let g0: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let g1: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let delta: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let preds = RiskPredictionSet::from_probs(g0, g1).unwrap();
        let base = mbcb(&delta, &preds).unwrap().value.unwrap();
        let moved: Vec<f64> = delta.iter().map(|d| scale * d + shift).collect();
        let reversed: Vec<f64> = delta.iter().map(|d| -d).collect();
        prop_assert!((mbcb(&moved, &preds).unwrap().value.unwrap() - base).abs() < 1e-12);
        prop_assert!((mbcb(&reversed, &preds).unwrap().value.unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn trial_csv_roundtrip(rows in prop::collection::vec((any::<bool>(), -1e6..1e6f64, -1e-3..1e-3f64), 2..30)) {
        let n = rows.len();
        let d = TrialDataset::new(
            rows.iter().map(|r| r.0 as u8 as f64).collect(),
            (0..n).map(|i| (i % 2) as u8).collect(),
            Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { rows[i].1 } else { rows[i].2 }),
        ).unwrap();
        let schema = TrialSchema::default();
        let mut buf = Vec::new();
        write_trial_csv(&mut buf, &d, &schema, &["u".into(), "v".into()]).unwrap();
        let back = parse_trial_csv(&buf, &schema).unwrap();
        prop_assert_eq!(back.covariate_names, vec!["u".to_string(), "v".to_string()]);
        prop_assert_eq!(back.data, d);
    }

    #[test]
    fn rounding_is_idempotent(v in -1e12..1e12f64) {
        let r = round_sig(v, 6);
        prop_assert_eq!(round_sig(r, 6), r);
        prop_assert!((r - v).abs() <= v.abs() * 5e-6 + 1e-300);
    }

    #[test]
    fn json_output_is_deterministic(values in prop::collection::btree_map("[a-z]{1,6}", -1e3..1e3f64, 0..8)) {
        prop_assert_eq!(to_json(&values).unwrap(), to_json(&values.clone()).unwrap());
    }
}

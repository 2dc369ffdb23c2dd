mod common;

use common::*;
use itval_core::data::{EvalContext, MetricName, TrialDataset};
use itval_core::glm::{DesignSpec, IteModel};
use itval_core::matching::MatchSpec;
use itval_core::resampling::*;
use itval_core::simulation::sample_references;
use ndarray::Array2;

fn balanced(pop_seed: u64, n: usize) -> TrialDataset {
    let mut d = observed(&dgm1(n, pop_seed));
    d.a = (0..n).map(|i| (i % 2) as u8).collect();
    d
}

fn small_plan(b: usize) -> ValidationPlan {
    ValidationPlan {
        bootstrap_replicates: b,
        repeats: 20,
        bootstrap_repeats: 10,
        ..ValidationPlan::default()
    }
}

#[test]
fn identity_resample_has_no_optimism() {
    let d = balanced(50, 300);
    let plan = small_plan(1);
    let iv = internal_validate_on(&d, &DesignSpec::ite(2), &plan, vec![(0..d.n()).collect()]).unwrap();
    for m in BOOTSTRAP_METRICS {
        let app = iv.get(m, EvalContext::Apparent).unwrap().value.unwrap();
        let cor = iv.get(m, EvalContext::OptimismCorrected).unwrap().value.unwrap();
        assert!((app - cor).abs() < 1e-12, "{m:?}: {app} vs {cor}");
    }
    // No out-of-sample cases, so nothing to combine.
    assert_eq!(iv.oos_dropped, 1);
    assert!(iv.get(MetricName::Mbcb, EvalContext::Boot632plus).unwrap().value.is_none());
}

#[test]
fn bootstrap_is_reproducible() {
    let d = observed(&dgm1(250, 51));
    let plan = small_plan(12);
    let a = internal_validate(&d, &DesignSpec::ite(2), &plan).unwrap();
    let b = internal_validate(&d, &DesignSpec::ite(2), &plan).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let other = internal_validate(&d, &DesignSpec::ite(2), &ValidationPlan { seed: 2, ..plan }).unwrap();
    assert_ne!(
        a.get(MetricName::Mbcb, EvalContext::OptimismCorrected).unwrap().value,
        other.get(MetricName::Mbcb, EvalContext::OptimismCorrected).unwrap().value
    );
    assert_eq!(a.replicates, 12);
    let opt = a.get(MetricName::CalSlope, EvalContext::OptimismCorrected).unwrap();
    assert!(opt.meta.contains_key("optimism"));
}

#[test]
fn replicates_without_both_arms_are_dropped() {
    let d = balanced(52, 200);
    let controls: Vec<usize> = (0..200).step_by(2).collect();
    let full: Vec<usize> = (0..200).collect();
    let resamples = vec![controls.clone(), controls, full.clone(), full];
    let iv = internal_validate_on(&d, &DesignSpec::ite(2), &small_plan(4), resamples).unwrap();
    assert_eq!(iv.dropped, 2);
    assert_eq!(iv.warnings, ["2 of 4 bootstrap replicates failed"]);
    let e = iv.get(MetricName::Mbcb, EvalContext::OptimismCorrected).unwrap();
    assert_eq!(e.meta["replicates_used"], 2);
}

#[test]
fn out_of_range_resample_is_rejected() {
    let d = balanced(53, 50);
    assert!(internal_validate_on(&d, &DesignSpec::ite(2), &small_plan(1), vec![vec![50]]).is_err());
    assert!(internal_validate_on(&d, &DesignSpec::ite(2), &small_plan(1), vec![]).is_err());
}

#[test]
fn stratified_bootstrap_runs() {
    let d = observed(&dgm1(200, 54));
    let plan = ValidationPlan {
        stratified: true,
        ..small_plan(5)
    };
    let iv = internal_validate(&d, &DesignSpec::ite(2), &plan).unwrap();
    assert_eq!(iv.dropped, 0);
    assert!(iv.get(MetricName::CalSlope, EvalContext::Boot632plus).unwrap().value.is_some());
}

#[test]
fn local_refit_on_same_law_tracks_the_sample_reference() {
    let dev = observed(&dgm1(2000, 55));
    let ext_pop = dgm1(20_000, 56);
    let ext = observed(&ext_pop);
    let m = IteModel::fit(&DesignSpec::ite(2), &dev).unwrap();
    let ev = external_validate(&m, &ext, ExternalMode::LocalRefit, &[MetricName::Mbcb], &MatchSpec::default(), 1).unwrap();
    assert!(ev.warnings.is_empty());
    let preds = itval_core::glm::predict_potential_risks(&m, ext.covariates()).unwrap();
    let reference = sample_references(&ext_pop, &preds).unwrap().concordance.unwrap();
    let est = ev.get(MetricName::Mbcb).unwrap().value.unwrap();
    assert!((est - reference).abs() < 0.01, "{est} vs {reference}");
    assert_eq!(ev.get(MetricName::Mbcb).unwrap().context, EvalContext::External);
}

#[test]
fn failed_local_refit_falls_back_with_a_warning() {
    let dev = observed(&dgm1(500, 57));
    let m = IteModel::fit(&DesignSpec::ite(2), &dev).unwrap();
    // Constant covariates make every refit rank deficient.
    let n = 60;
    let ext = TrialDataset::new(
        (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect(),
        (0..n).map(|i| (i % 2) as u8).collect(),
        Array2::from_elem((n, 2), 1.0),
    )
    .unwrap();
    let local = external_validate(&m, &ext, ExternalMode::LocalRefit, &MetricName::ALL, &MatchSpec::default(), 5).unwrap();
    assert_eq!(local.warnings.len(), 2, "{:?}", local.warnings);
    let naive = external_validate(&m, &ext, ExternalMode::Naive, &MetricName::ALL, &MatchSpec::default(), 5).unwrap();
    assert!(naive.warnings.is_empty());
    for (a, b) in local.estimates.iter().zip(&naive.estimates) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn plus632_hand_case() {
    let c = plus632_combine(0.7, 0.6, 0.5);
    assert!((c.r - 0.5).abs() < 1e-15);
    assert!((c.w - 0.632 / (1.0 - 0.368 * 0.5)).abs() < 1e-15);
    assert!((c.value - 127.0 / 204.0).abs() < 1e-12, "{}", c.value);
}

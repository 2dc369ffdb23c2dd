mod common;

use common::*;
use itval_core::glm::*;
use itval_core::stats::expit;
use ndarray::Array2;
use rand::Rng;

/// Plain Newton-Raphson with Gaussian elimination, no step control.
fn newton(x: &Array2<f64>, y: &[f64], offset: &[f64]) -> Vec<f64> {
    let (n, p) = x.dim();
    let mut b = vec![0.0; p];
    for _ in 0..100 {
        let mut h = vec![vec![0.0; p + 1]; p];
        for i in 0..n {
            let eta: f64 = offset[i] + (0..p).map(|k| x[[i, k]] * b[k]).sum::<f64>();
            let mu = expit(eta);
            for r in 0..p {
                h[r][p] += (y[i] - mu) * x[[i, r]];
                for c in 0..p {
                    h[r][c] += mu * (1.0 - mu) * x[[i, r]] * x[[i, c]];
                }
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs())).unwrap();
            h.swap(col, piv);
            for row in 0..p {
                if row != col {
                    let f = h[row][col] / h[col][col];
                    for k in col..=p {
                        h[row][k] -= f * h[col][k];
                    }
                }
            }
        }
        for k in 0..p {
            b[k] += h[k][p] / h[k][k];
        }
    }
    b
}

fn small_problem(seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((20, 3), |(_, k)| if k == 0 { 1.0 } else { r.random_range(-2.0..2.0) });
    let y: Vec<f64> = (0..20).map(|i| u8::from(r.random::<f64>() < expit(0.3 + x[[i, 1]] - 0.5 * x[[i, 2]])) as f64).collect();
    (x, y)
}

#[test]
fn irls_agrees_with_newton() {
    for seed in 0..10 {
        let (x, y) = small_problem(seed);
        let off: Vec<f64> = (0..20).map(|i| 0.1 * i as f64 - 1.0).collect();
        let fit = fit_logistic(x.view(), &y, Some(&off), None).unwrap();
        if fit.separation {
            continue;
        }
        let b = newton(&x, &y, &off);
        for k in 0..3 {
            assert!((fit.coefficients[k] - b[k]).abs() <= 1e-6, "{:?} vs {:?}", fit.coefficients, b);
        }
        assert!(fit.converged);
        assert!(fit.max_abs_score <= 1e-6);
    }
}

#[test]
fn constant_offset_moves_only_the_intercept() {
    let (x, y) = small_problem(3);
    let base = fit_logistic(x.view(), &y, None, None).unwrap();
    let shifted = fit_logistic(x.view(), &y, Some(&[0.7; 20]), None).unwrap();
    assert!((shifted.coefficients[0] - (base.coefficients[0] - 0.7)).abs() < 1e-6);
    for k in 1..3 {
        assert!((shifted.coefficients[k] - base.coefficients[k]).abs() < 1e-6);
    }
}

#[test]
fn recovers_generating_coefficients() {
    let pop = dgm1(100_000, 30);
    let d = observed(&pop);
    let m = IteModel::fit(&DesignSpec::ite(2), &d).unwrap();
    let truth = [-1.0, -0.75, 1.0, 0.0, 0.0, 0.5];
    for (b, t) in m.fit.coefficients.iter().zip(truth) {
        assert!((b - t).abs() <= 0.05, "{:?}", m.fit.coefficients);
    }
    assert!(m.fit.max_abs_score <= 1e-6);
}

#[test]
fn fractional_responses_reproduce_their_own_law() {
    // With y equal to the fitted law's own probabilities, the fit returns that law.
    let mut r = rng(31);
    let x = Array2::from_shape_fn((500, 2), |(_, k)| if k == 0 { 1.0 } else { r.random_range(-2.0..2.0) });
    let y: Vec<f64> = (0..500).map(|i| expit(-0.4 + 1.3 * x[[i, 1]])).collect();
    let fit = fit_logistic(x.view(), &y, None, None).unwrap();
    assert!((fit.coefficients[0] + 0.4).abs() < 1e-8);
    assert!((fit.coefficients[1] - 1.3).abs() < 1e-8);
}

#[test]
fn weights_equal_replication() {
    let (x, y) = small_problem(4);
    let w: Vec<f64> = (0..20).map(|i| (i % 3) as f64).collect();
    let mut rows = Vec::new();
    for (i, &wi) in w.iter().enumerate() {
        rows.extend(std::iter::repeat_n(i, wi as usize));
    }
    let xr = Array2::from_shape_fn((rows.len(), 3), |(i, k)| x[[rows[i], k]]);
    let yr: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let a = fit_logistic(x.view(), &y, None, Some(&w)).unwrap();
    let b = fit_logistic(xr.view(), &yr, None, None).unwrap();
    for k in 0..3 {
        assert!((a.coefficients[k] - b.coefficients[k]).abs() < 1e-6);
    }
}

#[test]
fn rank_deficiency_names_the_term() {
    let pop = dgm1(200, 32);
    let mut d = observed(&pop);
    let first = d.x.column(0).to_owned();
    d.x.column_mut(1).assign(&first);
    match IteModel::fit(&DesignSpec::ite(2), &d) {
        Err(itval_core::Error::RankDeficient { name, .. }) => assert!(name.ends_with("x2"), "{name}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn separation_is_reported() {
    let x = Array2::from_shape_fn((10, 2), |(i, k)| if k == 0 { 1.0 } else { i as f64 });
    let y: Vec<f64> = (0..10).map(|i| f64::from(u8::from(i >= 5))).collect();
    let fit = fit_logistic(x.view(), &y, None, None).unwrap();
    assert!(fit.separation);
}

#[test]
fn potential_risks_follow_the_design() {
    let pop = dgm1(2000, 33);
    let d = observed(&pop);
    let m = IteModel::fit(&DesignSpec::ite(2), &d).unwrap();
    let p = predict_potential_risks(&m, d.covariates()).unwrap();
    let b = &m.fit.coefficients;
    for i in 0..20 {
        let (x1, x2) = (d.x[[i, 0]], d.x[[i, 1]]);
        let lp0 = b[0] + b[2] * x1 + b[3] * x2;
        let lp1 = lp0 + b[1] + b[4] * x1 + b[5] * x2;
        assert!((p.lp0[i] - lp0).abs() < 1e-12 && (p.lp1[i] - lp1).abs() < 1e-12);
        assert!((p.delta[i] - (expit(lp1) - expit(lp0))).abs() < 1e-12);
    }
    let c = IteModel::fit_control_arm(&DesignSpec::ite(2), &d).unwrap();
    assert_eq!(c.fit.coefficients.len(), 3);
}

mod common;

use calibrated_ob::regression::{fit_glm, fit_ols, glm_log_likelihood, glm_score, DesignMatrix, Family};
use common::{gaussian, random_design, rng};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn with_intercept(x: &DesignMatrix) -> nalgebra::DMatrix<f64> {
    let m = x.as_matrix();
    nalgebra::DMatrix::from_fn(
        m.nrows(),
        m.ncols() + 1,
        |i, j| if j == 0 { 1.0 } else { m[(i, j - 1)] },
    )
}

#[test]
fn ols_normal_equations_and_residual_sum() {
    let mut r = rng(1);
    for trial in 0..50 {
        let n = 20 + trial;
        let k = 1 + trial % 4;
        let x = random_design(&mut r, n, k);
        let y: Vec<f64> = (0..n).map(|_| 3.0 * gaussian(&mut r) + 10.0).collect();
        let fit = fit_ols(&x, &y, true).unwrap();
        assert!(!fit.rank_deficient);

        let a = with_intercept(&x);
        let mut beta = vec![fit.intercept];
        beta.extend(&fit.slopes);
        let beta = DVector::from_vec(beta);
        let yv = DVector::from_vec(y.clone());
        let aty = a.transpose() * &yv;
        let gap = (a.transpose() * &a * &beta - &aty).amax();
        assert!(gap <= 1e-8 * aty.amax(), "normal equations gap {gap}");

        let pred = fit.predict(&x).unwrap();
        let resid_sum: f64 = y.iter().zip(&pred).map(|(a, b)| a - b).sum();
        let scale: f64 = y.iter().map(|v| v.abs()).sum();
        assert!(resid_sum.abs() <= 1e-10 * scale, "residual sum {resid_sum}");
    }
}

#[test]
fn ols_reproduces_exact_linear_data() {
    let x = DesignMatrix::from_columns(5, &[vec![0.0, 1.0, 2.0, 3.5, -1.0], vec![1.0, 0.0, 4.0, 2.0, 2.0]]).unwrap();
    let y: Vec<f64> = (0..5).map(|i| 1.5 - 2.0 * x.get(i, 0) + 0.25 * x.get(i, 1)).collect();
    let pred = fit_ols(&x, &y, true).unwrap().predict(&x).unwrap();
    for (p, t) in pred.iter().zip(&y) {
        assert!((p - t).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duplicated_column_leaves_predictions(seed in 0u64..10_000, n in 6usize..40, k in 1usize..4, dup in 0usize..4) {
        let mut r = rng(seed);
        let x = random_design(&mut r, n, k);
        let y: Vec<f64> = (0..n).map(|_| gaussian(&mut r)).collect();
        let dup = dup % k;
        let extra = DesignMatrix::from_columns(n, &[x.column(dup)]).unwrap();
        let wide = x.hstack(&extra).unwrap();

        let base = fit_ols(&x, &y, true).unwrap();
        let dup_fit = fit_ols(&wide, &y, true).unwrap();
        prop_assert!(dup_fit.rank_deficient);
        let p0 = base.predict(&x).unwrap();
        let p1 = dup_fit.predict(&wide).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
    }
}

fn random_glm_problem<R: Rng>(r: &mut R, family: Family) -> (DesignMatrix, Vec<f64>, Vec<f64>) {
    let n = 15 + r.random_range(0..40);
    let k = r.random_range(0..4);
    let x = random_design(r, n, k);
    let y: Vec<f64> = (0..n)
        .map(|_| match family {
            Family::Logistic => f64::from(u8::from(r.random::<f64>() < 0.4)),
            Family::Poisson => r.random_range(0..6) as f64,
        })
        .collect();
    let coef: Vec<f64> = (0..=k).map(|_| 0.5 * gaussian(r)).collect();
    (x, y, coef)
}

#[test]
fn analytic_score_matches_finite_differences() {
    let mut r = rng(2);
    for family in [Family::Logistic, Family::Poisson] {
        for _ in 0..50 {
            let (x, y, coef) = random_glm_problem(&mut r, family);
            let score = glm_score(&x, &y, family, true, &coef).unwrap();
            for j in 0..coef.len() {
                let h = 1e-5;
                let mut up = coef.clone();
                let mut down = coef.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (glm_log_likelihood(&x, &y, family, true, &up).unwrap()
                    - glm_log_likelihood(&x, &y, family, true, &down).unwrap())
                    / (2.0 * h);
                let rel = (fd - score[j]).abs() / score[j].abs().max(1.0);
                assert!(rel <= 1e-4, "{family:?} coef {j}: fd {fd} vs analytic {}", score[j]);
            }
        }
    }
}

#[test]
fn converged_fits_satisfy_score_and_fitted_sum_identities() {
    let mut r = rng(3);
    let mut converged = 0;
    for family in [Family::Logistic, Family::Poisson] {
        for _ in 0..40 {
            let n = 60;
            let x = random_design(&mut r, n, 2);
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let eta = 0.3 + 0.7 * x.get(i, 0) - 0.4 * x.get(i, 1);
                    match family {
                        Family::Logistic => f64::from(u8::from(r.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))),
                        Family::Poisson => {
                            // inversion sampling of a Poisson(exp(eta)) count
                            let lambda = eta.exp();
                            let (mut k, mut p, u) = (0.0, (-lambda).exp(), r.random::<f64>());
                            let mut cdf = p;
                            while u > cdf && k < 100.0 {
                                k += 1.0;
                                p *= lambda / k;
                                cdf += p;
                            }
                            k
                        }
                    }
                })
                .collect();
            let fit = fit_glm(&x, &y, family, true).unwrap();
            if !fit.converged {
                continue;
            }
            converged += 1;
            assert!(fit.max_abs_score <= 1e-6);
            let mut coef = vec![fit.intercept];
            coef.extend(&fit.slopes);
            let score = glm_score(&x, &y, family, true, &coef).unwrap();
            assert!(score.iter().all(|s| s.abs() <= 1e-6));
            let fitted: f64 = fit.predict(&x).unwrap().iter().sum();
            let observed: f64 = y.iter().sum();
            assert!((fitted - observed).abs() <= 1e-6, "{family:?}: {fitted} vs {observed}");
        }
    }
    assert!(converged >= 70);
}

#[test]
fn glm_dimension_checks() {
    let x = DesignMatrix::from_columns(2, &[vec![1.0, 2.0]]).unwrap();
    assert!(glm_score(&x, &[0.0, 1.0], Family::Logistic, true, &[0.0]).is_err());
    assert!(glm_log_likelihood(&x, &[0.0], Family::Logistic, true, &[0.0, 0.0]).is_err());
}

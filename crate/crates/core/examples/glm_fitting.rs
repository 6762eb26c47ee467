//! Fits logistic and Poisson regressions by IRLS and reports the diagnostics,
//! including what happens on perfectly separated data.

use calibrated_ob::regression::{fit_glm, fit_ols, DesignMatrix, Family};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0 - 5.0).collect();
    let design = DesignMatrix::from_columns(x.len(), std::slice::from_ref(&x))?;

    let y_bin: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| f64::from(u8::from(v + (i as f64 * 2.3).sin() * 2.0 > 0.0)))
        .collect();
    let logit = fit_glm(&design, &y_bin, Family::Logistic, true)?;
    println!(
        "logistic: intercept {:.4}, slope {:.4}, converged {}, {} iterations, |score| {:.1e}",
        logit.intercept, logit.slopes[0], logit.converged, logit.iterations, logit.max_abs_score
    );

    let y_count: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| ((0.2 * v + 1.0).exp() + (i % 3) as f64).floor())
        .collect();
    let pois = fit_glm(&design, &y_count, Family::Poisson, true)?;
    println!(
        "poisson:  intercept {:.4}, slope {:.4}, converged {}, {} iterations",
        pois.intercept, pois.slopes[0], pois.converged, pois.iterations
    );

    let separated: Vec<f64> = x.iter().map(|v| f64::from(u8::from(*v > 0.0))).collect();
    let sep = fit_glm(&design, &separated, Family::Logistic, true)?;
    println!(
        "separated: converged {}, separated {}, slope {:.1}",
        sep.converged, sep.separated, sep.slopes[0]
    );

    let twice = design.hstack(&design)?;
    let ols = fit_ols(&twice, &y_count, true)?;
    println!(
        "ols on duplicated column: rank {} of {}, slopes {:?}",
        ols.effective_rank,
        twice.ncols(),
        ols.slopes.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
    );
    Ok(())
}

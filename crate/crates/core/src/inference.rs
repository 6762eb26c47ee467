//! Conservative variance estimates and normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{CalibratedPair, Evaluation};
use crate::experiment::{FinitePopulation, ObservedExperiment, TreatmentAllocation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub prediction_unbiasedness_gap: f64,
    pub base_converged: bool,
    pub rank_deficient: bool,
}

/// Point estimate, standard error and symmetric confidence interval for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub diagnostics: ReportDiagnostics,
}

impl EstimateReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `s1^2 / n1 + s0^2 / n0` with `s_z^2` the sample variance (divisor `n_z - 1`)
/// of the within-arm residuals `y - mu_z`.
pub fn residual_variance(obs: &ObservedExperiment, mu0: &[f64], mu1: &[f64]) -> Result<f64> {
    let (n1, n0) = (obs.n1(), obs.n0());
    if n1 < 2 || n0 < 2 {
        return Err(Error::ArmTooSmall { n1, n0 });
    }
    if mu0.len() != obs.len() || mu1.len() != obs.len() {
        return Err(Error::DimensionMismatch("predictions must cover every unit".into()));
    }
    let resid = |treated: bool, mu: &[f64]| -> Vec<f64> {
        obs.allocation()
            .arm(treated)
            .into_iter()
            .map(|i| obs.y_obs()[i] - mu[i])
            .collect()
    };
    Ok(sample_variance(&resid(true, mu1)) / n1 as f64 + sample_variance(&resid(false, mu0)) / n0 as f64)
}

/// Conservative plug-in variance for the calibrated estimator. The
/// unidentifiable effect-heterogeneity term is dropped.
pub fn variance_estimate(obs: &ObservedExperiment, cal: &CalibratedPair) -> Result<f64> {
    residual_variance(obs, &cal.mu0_cal, &cal.mu1_cal)
}

/// The studentizing variance computed with both potential outcomes known:
/// `MSE(1)/n1 + MSE(0)/n0 - sum (e_i(1) - e_i(0))^2 / (N (N-1))`, residuals
/// `e_i(z) = y_i(z) - mu_z(x_i)` over all units. Simulation use only.
pub fn infeasible_variance(
    pop: &FinitePopulation,
    alloc: &TreatmentAllocation,
    mu0: &[f64],
    mu1: &[f64],
) -> Result<f64> {
    let n = pop.len();
    if alloc.len() != n || mu0.len() != n || mu1.len() != n {
        return Err(Error::DimensionMismatch(
            "population, allocation and predictions differ in length".into(),
        ));
    }
    let e1: Vec<f64> = (0..n).map(|i| pop.y1()[i] - mu1[i]).collect();
    let e0: Vec<f64> = (0..n).map(|i| pop.y0()[i] - mu0[i]).collect();
    let nf = n as f64;
    let mse = |e: &[f64]| e.iter().map(|v| v * v).sum::<f64>() / nf;
    let het = e1.iter().zip(&e0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (nf * (nf - 1.0));
    Ok(mse(&e1) / alloc.n1() as f64 + mse(&e0) / alloc.n0() as f64 - het)
}

/// Two-sided standard normal critical value for confidence `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

pub fn make_report(
    name: &str,
    estimate: f64,
    variance: f64,
    level: f64,
    obs: &ObservedExperiment,
    diagnostics: ReportDiagnostics,
) -> Result<EstimateReport> {
    let z = normal_critical_value(level)?;
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::InvalidVariance(variance));
    }
    let std_error = variance.sqrt();
    let half = z * std_error;
    Ok(EstimateReport {
        estimator: name.to_string(),
        estimate,
        std_error,
        ci_lower: estimate - half,
        ci_upper: estimate + half,
        level,
        n: obs.len(),
        n1: obs.n1(),
        n0: obs.n0(),
        diagnostics,
    })
}

/// Report for an [`Evaluation`] using the residual variance of its predictions.
pub fn report_for(obs: &ObservedExperiment, eval: &Evaluation, level: f64) -> Result<EstimateReport> {
    let variance = residual_variance(obs, &eval.mu0, &eval.mu1)?;
    let diagnostics = ReportDiagnostics {
        prediction_unbiasedness_gap: eval.unbiasedness_gap(obs),
        base_converged: eval.base_converged,
        rank_deficient: eval.rank_deficient,
    };
    make_report(eval.estimator.name(), eval.estimate, variance, level, obs, diagnostics)
}

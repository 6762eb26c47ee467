//! Treatment-effect estimators built on imputation of the missing potential
//! outcomes.
//!
//! * `unadj`: difference in means.
//! * `gob`: impute each unit's unobserved outcome from arm-specific base learners.
//! * `cal`: calibrate the base predictions by an arm-wise least-squares
//!   regression of the observed outcome on both predictions plus an intercept,
//!   then average the calibrated differences.
//! * `cal2`: `cal` with additional engineered features (the covariates themselves by default).
//! * `gbcal`: calibrate on the own-arm prediction only.
//! * `lin`: arm-wise OLS on the raw covariates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ObservedExperiment;
use crate::regression::{fit_glm, fit_ols, DesignMatrix, Family, LinearFit};

/// Model used for the initial arm-wise predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLearner {
    Ols,
    Logistic,
    Poisson,
}

impl BaseLearner {
    pub fn name(self) -> &'static str {
        match self {
            BaseLearner::Ols => "ols",
            BaseLearner::Logistic => "logistic",
            BaseLearner::Poisson => "poisson",
        }
    }
}

impl fmt::Display for BaseLearner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseLearner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(BaseLearner::Ols),
            "logistic" => Ok(BaseLearner::Logistic),
            "poisson" => Ok(BaseLearner::Poisson),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

/// Fit flags for one arm's base learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmFitDiagnostics {
    pub converged: bool,
    pub rank_deficient: bool,
}

/// Base-learner predictions for every unit under both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub base_learner: BaseLearner,
    pub control_fit: ArmFitDiagnostics,
    pub treated_fit: ArmFitDiagnostics,
}

impl PredictionPair {
    /// Wraps externally produced predictions (e.g. from another model).
    pub fn from_predictions(mu0: Vec<f64>, mu1: Vec<f64>, base_learner: BaseLearner) -> Result<Self> {
        if mu0.len() != mu1.len() {
            return Err(Error::DimensionMismatch("mu0 and mu1 differ in length".into()));
        }
        if mu0.iter().chain(&mu1).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictions"));
        }
        let ok = ArmFitDiagnostics {
            converged: true,
            rank_deficient: false,
        };
        Ok(Self {
            mu0,
            mu1,
            base_learner,
            control_fit: ok,
            treated_fit: ok,
        })
    }

    pub fn converged(&self) -> bool {
        self.control_fit.converged && self.treated_fit.converged
    }

    pub fn rank_deficient(&self) -> bool {
        self.control_fit.rank_deficient || self.treated_fit.rank_deficient
    }

    fn check_len(&self, obs: &ObservedExperiment) -> Result<()> {
        if self.mu0.len() != obs.len() || self.mu1.len() != obs.len() {
            return Err(Error::DimensionMismatch(format!(
                "predictions cover {} units, experiment has {}",
                self.mu0.len(),
                obs.len()
            )));
        }
        Ok(())
    }
}

/// Calibrated predictions for every unit plus the arm-wise calibration fits.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPair {
    pub mu0_cal: Vec<f64>,
    pub mu1_cal: Vec<f64>,
    pub control_fit: LinearFit,
    pub treated_fit: LinearFit,
}

impl CalibratedPair {
    pub fn rank_deficient(&self) -> bool {
        self.control_fit.rank_deficient || self.treated_fit.rank_deficient
    }

    /// Largest per-arm relative gap `|sum fitted - sum observed| / (1 + |sum observed|)`.
    pub fn unbiasedness_gap(&self, obs: &ObservedExperiment) -> f64 {
        unbiasedness_gap(obs, &self.mu0_cal, &self.mu1_cal)
    }
}

/// Per-arm prediction-unbiasedness gap of an arbitrary pair of prediction vectors.
pub fn unbiasedness_gap(obs: &ObservedExperiment, mu0: &[f64], mu1: &[f64]) -> f64 {
    let gap = |treated: bool, mu: &[f64]| {
        let idx = obs.allocation().arm(treated);
        let fitted: f64 = idx.iter().map(|&i| mu[i]).sum();
        let observed: f64 = idx.iter().map(|&i| obs.y_obs()[i]).sum();
        (fitted - observed).abs() / (1.0 + observed.abs())
    };
    gap(false, mu0).max(gap(true, mu1))
}

fn column_design(n: usize, columns: &[&[f64]]) -> Result<DesignMatrix> {
    let cols: Vec<Vec<f64>> = columns.iter().map(|c| c.to_vec()).collect();
    DesignMatrix::from_columns(n, &cols)
}

/// Fits `learner` with intercept on arm `treated` and predicts at every unit.
fn fit_arm(
    obs: &ObservedExperiment,
    design: &DesignMatrix,
    treated: bool,
    learner: BaseLearner,
) -> Result<(Vec<f64>, ArmFitDiagnostics)> {
    let rows = obs.allocation().arm(treated);
    let x_arm = design.select_rows(&rows)?;
    let y_arm: Vec<f64> = rows.iter().map(|&i| obs.y_obs()[i]).collect();
    match learner {
        BaseLearner::Ols => {
            let fit = fit_ols(&x_arm, &y_arm, true)?;
            let diag = ArmFitDiagnostics {
                converged: true,
                rank_deficient: fit.rank_deficient,
            };
            Ok((fit.predict(design)?, diag))
        }
        BaseLearner::Logistic | BaseLearner::Poisson => {
            let family = if learner == BaseLearner::Logistic {
                Family::Logistic
            } else {
                Family::Poisson
            };
            let fit = fit_glm(&x_arm, &y_arm, family, true)?;
            let diag = ArmFitDiagnostics {
                converged: fit.converged,
                rank_deficient: false,
            };
            Ok((fit.predict(design)?, diag))
        }
    }
}

/// Trains the arm-specific base learners (outcome on covariates, with intercept)
/// and evaluates both at every unit.
pub fn fit_base_learners(obs: &ObservedExperiment, learner: BaseLearner) -> Result<PredictionPair> {
    let (mu0, control_fit) = fit_arm(obs, obs.x(), false, learner)?;
    let (mu1, treated_fit) = fit_arm(obs, obs.x(), true, learner)?;
    if mu0.iter().chain(&mu1).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("base learner predictions"));
    }
    Ok(PredictionPair {
        mu0,
        mu1,
        base_learner: learner,
        control_fit,
        treated_fit,
    })
}

/// Treated-arm mean minus control-arm mean.
pub fn tau_unadj(obs: &ObservedExperiment) -> f64 {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    mean(obs.arm_outcomes(true)) - mean(obs.arm_outcomes(false))
}

/// Imputation average `N^-1 sum (yhat_i(1) - yhat_i(0))` where the observed
/// outcome is kept for the realised arm and the prediction fills the other.
pub fn hybrid_imputation(obs: &ObservedExperiment, mu0: &[f64], mu1: &[f64]) -> Result<f64> {
    let n = obs.len();
    if mu0.len() != n || mu1.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "predictions cover {}/{} units, experiment has {n}",
            mu0.len(),
            mu1.len()
        )));
    }
    let total: f64 = (0..n)
        .map(|i| {
            let y = obs.y_obs()[i];
            if obs.allocation().is_treated(i) {
                y - mu0[i]
            } else {
                mu1[i] - y
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean over all units of `mu1 - mu0`.
pub fn full_imputation(mu0: &[f64], mu1: &[f64]) -> f64 {
    mu1.iter().zip(mu0).map(|(a, b)| a - b).sum::<f64>() / mu0.len() as f64
}

/// Generalized Oaxaca-Blinder estimator on uncalibrated predictions.
pub fn tau_gob(obs: &ObservedExperiment, preds: &PredictionPair) -> Result<f64> {
    preds.check_len(obs)?;
    hybrid_imputation(obs, &preds.mu0, &preds.mu1)
}

/// Arm-wise OLS (with intercept) of the observed outcome on arm-specific
/// feature sets, each evaluated at every unit.
pub fn calibrate_on(
    obs: &ObservedExperiment,
    control_features: &DesignMatrix,
    treated_features: &DesignMatrix,
) -> Result<CalibratedPair> {
    if control_features.nrows() != obs.len() || treated_features.nrows() != obs.len() {
        return Err(Error::DimensionMismatch(
            "calibration features must cover every unit".into(),
        ));
    }
    let fit = |treated: bool, design: &DesignMatrix| -> Result<(Vec<f64>, LinearFit)> {
        let rows = obs.allocation().arm(treated);
        let y: Vec<f64> = rows.iter().map(|&i| obs.y_obs()[i]).collect();
        let lf = fit_ols(&design.select_rows(&rows)?, &y, true)?;
        Ok((lf.predict(design)?, lf))
    };
    let (mu0_cal, control_fit) = fit(false, control_features)?;
    let (mu1_cal, treated_fit) = fit(true, treated_features)?;
    Ok(CalibratedPair {
        mu0_cal,
        mu1_cal,
        control_fit,
        treated_fit,
    })
}

/// Linear calibration on `(mu0, mu1)` and optional extra features, the same
/// pseudo-features for both arms.
pub fn calibrate(
    obs: &ObservedExperiment,
    preds: &PredictionPair,
    extra_features: Option<&DesignMatrix>,
) -> Result<CalibratedPair> {
    preds.check_len(obs)?;
    let mut design = column_design(obs.len(), &[&preds.mu0, &preds.mu1])?;
    if let Some(extra) = extra_features {
        design = design.hstack(extra)?;
    }
    calibrate_on(obs, &design, &design)
}

/// Calibrated estimator, averaged over fully imputed calibrated predictions.
/// With extra features this is the feature-augmented `cal2`.
pub fn tau_cal(obs: &ObservedExperiment, preds: &PredictionPair, extra_features: Option<&DesignMatrix>) -> Result<f64> {
    let cal = calibrate(obs, preds, extra_features)?;
    Ok(full_imputation(&cal.mu0_cal, &cal.mu1_cal))
}

/// Single calibration: arm `z` regresses on its own prediction `mu_z` only.
pub fn calibrate_single(obs: &ObservedExperiment, preds: &PredictionPair) -> Result<CalibratedPair> {
    preds.check_len(obs)?;
    let n = obs.len();
    calibrate_on(
        obs,
        &column_design(n, &[&preds.mu0])?,
        &column_design(n, &[&preds.mu1])?,
    )
}

pub fn tau_gbcal(obs: &ObservedExperiment, preds: &PredictionPair) -> Result<f64> {
    let cal = calibrate_single(obs, preds)?;
    Ok(full_imputation(&cal.mu0_cal, &cal.mu1_cal))
}

/// Arm-wise OLS fits on the raw covariates.
pub fn lin_fit(obs: &ObservedExperiment) -> Result<CalibratedPair> {
    calibrate_on(obs, obs.x(), obs.x())
}

/// Regression-adjusted estimator with arm-specific slopes.
pub fn tau_lin(obs: &ObservedExperiment) -> Result<f64> {
    let fit = lin_fit(obs)?;
    Ok(full_imputation(&fit.mu0_cal, &fit.mu1_cal))
}

/// Calibrates the calibrated predictions once more and returns the sup-norm
/// of the change over both arms and all units. Zero up to rounding.
pub fn recalibrate_check(obs: &ObservedExperiment, cal: &CalibratedPair) -> Result<f64> {
    let again = PredictionPair::from_predictions(cal.mu0_cal.clone(), cal.mu1_cal.clone(), BaseLearner::Ols)?;
    let twice = calibrate(obs, &again, None)?;
    let change = cal
        .mu0_cal
        .iter()
        .zip(&twice.mu0_cal)
        .chain(cal.mu1_cal.iter().zip(&twice.mu1_cal))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(change)
}

/// Named estimators available to reports and simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Unadj,
    Gob,
    Gbcal,
    Cal,
    Cal2,
    Lin,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Unadj,
        Estimator::Gob,
        Estimator::Gbcal,
        Estimator::Cal,
        Estimator::Cal2,
        Estimator::Lin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Unadj => "unadj",
            Estimator::Gob => "gob",
            Estimator::Gbcal => "gbcal",
            Estimator::Cal => "cal",
            Estimator::Cal2 => "cal2",
            Estimator::Lin => "lin",
        }
    }

    fn needs_base_learners(self) -> bool {
        matches!(
            self,
            Estimator::Gob | Estimator::Gbcal | Estimator::Cal | Estimator::Cal2
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

/// One estimator's value together with the predictions behind it.
///
/// `mu0`/`mu1` are the imputation functions whose within-arm residuals drive
/// the variance estimate: arm means for `unadj`, raw base predictions for
/// `gob`, calibrated predictions otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub estimator: Estimator,
    pub estimate: f64,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub base_converged: bool,
    pub rank_deficient: bool,
}

impl Evaluation {
    pub fn unbiasedness_gap(&self, obs: &ObservedExperiment) -> f64 {
        unbiasedness_gap(obs, &self.mu0, &self.mu1)
    }
}

fn from_calibration(estimator: Estimator, cal: CalibratedPair, base_converged: bool) -> Evaluation {
    Evaluation {
        estimator,
        estimate: full_imputation(&cal.mu0_cal, &cal.mu1_cal),
        rank_deficient: cal.rank_deficient(),
        mu0: cal.mu0_cal,
        mu1: cal.mu1_cal,
        base_converged,
    }
}

/// Computes several estimators on one experiment, fitting the base learners once.
/// `cal2_features` defaults to the covariates themselves.
pub fn evaluate(
    obs: &ObservedExperiment,
    learner: BaseLearner,
    estimators: &[Estimator],
    cal2_features: Option<&DesignMatrix>,
) -> Result<Vec<Evaluation>> {
    let preds = if estimators.iter().any(|e| e.needs_base_learners()) {
        Some(fit_base_learners(obs, learner)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(estimators.len());
    for &est in estimators {
        let eval = match est {
            Estimator::Unadj => {
                let empty = DesignMatrix::empty(obs.len())?;
                from_calibration(est, calibrate_on(obs, &empty, &empty)?, true)
            }
            Estimator::Lin => from_calibration(est, lin_fit(obs)?, true),
            Estimator::Gob => {
                let p = preds.as_ref().expect("base learners fitted");
                Evaluation {
                    estimator: est,
                    estimate: tau_gob(obs, p)?,
                    mu0: p.mu0.clone(),
                    mu1: p.mu1.clone(),
                    base_converged: p.converged(),
                    rank_deficient: p.rank_deficient(),
                }
            }
            Estimator::Gbcal => {
                let p = preds.as_ref().expect("base learners fitted");
                from_calibration(est, calibrate_single(obs, p)?, p.converged())
            }
            Estimator::Cal => {
                let p = preds.as_ref().expect("base learners fitted");
                from_calibration(est, calibrate(obs, p, None)?, p.converged())
            }
            Estimator::Cal2 => {
                let p = preds.as_ref().expect("base learners fitted");
                let features = cal2_features.unwrap_or_else(|| obs.x());
                from_calibration(est, calibrate(obs, p, Some(features))?, p.converged())
            }
        };
        if !eval.estimate.is_finite() {
            return Err(Error::NonFinite("estimate"));
        }
        out.push(eval);
    }
    Ok(out)
}

//! Calibrated generalized Oaxaca-Blinder estimators for the sample average
//! treatment effect in completely randomized experiments.
//!
//! The crate bundles everything needed to go from data to an estimate:
//!
//! * [`regression`]: minimum-norm OLS and logistic/Poisson IRLS fitters.
//! * [`experiment`]: finite populations, complete randomization, CSV ingestion.
//! * [`estimators`]: difference in means, imputation (gOB), calibrated
//!   (`cal`, `cal2`), singly calibrated (`gbcal`) and Lin's estimator.
//! * [`inference`]: conservative variance estimates and confidence intervals.
//! * [`simulation`]: the binary-outcome benchmark design, Monte Carlo
//!   variance ratios and exact randomization distributions.
//! * [`cli`]: the `calob` command-line front end.
//!
//! ```
//! use calibrated_ob::estimators::{evaluate, BaseLearner, Estimator};
//! use calibrated_ob::experiment::{ObservedExperiment, TreatmentAllocation};
//! use calibrated_ob::regression::DesignMatrix;
//!
//! let z = TreatmentAllocation::new(vec![true, true, true, false, false, false]).unwrap();
//! let x = DesignMatrix::from_columns(6, &[vec![0.1, 0.5, 0.9, 0.2, 0.6, 1.0]]).unwrap();
//! let obs = ObservedExperiment::new(z, vec![1.2, 1.9, 2.8, 0.1, 0.7, 1.2], x).unwrap();
//!
//! let evals = evaluate(&obs, BaseLearner::Ols, &[Estimator::Lin, Estimator::Cal], None).unwrap();
//! assert!((evals[0].estimate - evals[1].estimate).abs() < 1e-10);
//! ```

pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod inference;
pub mod regression;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};

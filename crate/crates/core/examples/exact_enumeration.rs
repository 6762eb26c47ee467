//! Exact randomization distribution of several estimators on a small
//! population, enumerating every complete randomization.

use calibrated_ob::estimators::{BaseLearner, Estimator};
use calibrated_ob::experiment::FinitePopulation;
use calibrated_ob::regression::DesignMatrix;
use calibrated_ob::simulation::exact_randomization_distribution;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x: Vec<f64> = vec![-1.2, -0.7, -0.3, 0.0, 0.4, 0.9, 1.3, 1.8, 2.1, 2.6];
    let y0: Vec<f64> = x.iter().map(|v| 1.0 + 0.8 * v + 0.1 * (7.0 * v).sin()).collect();
    let y1: Vec<f64> = x.iter().map(|v| 1.5 + 1.1 * v + 0.1 * (5.0 * v).cos()).collect();
    let pop = FinitePopulation::new(y0, y1, DesignMatrix::from_columns(x.len(), &[x])?)?;

    let estimators = [Estimator::Unadj, Estimator::Gob, Estimator::Cal, Estimator::Lin];
    let dist = exact_randomization_distribution(&pop, 5, BaseLearner::Ols, &estimators, 10_000)?;

    println!(
        "N = {}, n1 = {}, {} allocations, tau_bar = {:.6}",
        dist.n, dist.n1, dist.allocations, dist.tau_bar
    );
    println!("{:>6} {:>12} {:>12} {:>12}", "est", "mean", "bias", "variance");
    for s in &dist.estimators {
        println!(
            "{:>6} {:>12.6} {:>12.2e} {:>12.6}",
            s.estimator.name(),
            s.mean,
            s.mean - dist.tau_bar,
            s.variance
        );
    }
    Ok(())
}

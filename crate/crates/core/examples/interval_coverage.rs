//! Coverage of 95% intervals for the sample average treatment effect over
//! repeated randomizations of one simulated population.
//!
//! ```text
//! cargo run --release --example interval_coverage -- [N] [B]
//! ```

use calibrated_ob::estimators::{BaseLearner, Estimator};
use calibrated_ob::inference::normal_critical_value;
use calibrated_ob::simulation::{generate_population, population_stream, simulate_allocations, DgpSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(1000);
    let b = args.get(1).copied().unwrap_or(500);

    let spec = DgpSpec::new(n);
    let pop = generate_population(&spec, &mut population_stream(31, n, 0))?;
    let estimators = [Estimator::Unadj, Estimator::Gob, Estimator::Cal, Estimator::Cal2];
    let z = normal_critical_value(0.95)?;
    let draws: Vec<_> = simulate_allocations(&pop, spec.n1(), BaseLearner::Logistic, &estimators, 31, 0, b, true)
        .into_iter()
        .filter_map(Result::ok)
        .collect();

    println!("N = {n}, {} allocations, tau_bar = {:.4}", draws.len(), pop.tau_bar());
    println!("{:>6} {:>10} {:>10}", "est", "coverage", "mean se");
    for (j, est) in estimators.iter().enumerate() {
        let mut covered = 0;
        let mut se_sum = 0.0;
        for d in &draws {
            let se = d.variances.as_ref().expect("variances requested")[j].sqrt();
            se_sum += se;
            covered += usize::from((d.estimates[j] - pop.tau_bar()).abs() <= z * se);
        }
        let m = draws.len() as f64;
        println!("{:>6} {:>10.3} {:>10.4}", est.name(), covered as f64 / m, se_sum / m);
    }
    Ok(())
}

//! Monte Carlo variance ratios of the adjusted estimators against the
//! difference in means on the binary Gaussian-bump design.
//!
//! ```text
//! cargo run --release --example variance_ratio_table -- [S] [B] [N...]
//! ```

use calibrated_ob::estimators::{BaseLearner, Estimator};
use calibrated_ob::simulation::{run_monte_carlo, MonteCarloConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let populations = args.first().copied().unwrap_or(100);
    let allocations = args.get(1).copied().unwrap_or(500);
    let sizes = if args.len() > 2 {
        args[2..].to_vec()
    } else {
        vec![100, 500, 1000]
    };

    let config = MonteCarloConfig {
        sizes,
        populations,
        allocations,
        learner: BaseLearner::Logistic,
        estimators: vec![Estimator::Gob, Estimator::Gbcal, Estimator::Cal],
        seed: 2024,
        ..MonteCarloConfig::default()
    };
    let table = run_monte_carlo(&config)?;

    println!("S = {populations}, B = {allocations}, logistic base learners");
    println!(
        "{:>7} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "N", "gob", "gbcal", "cal", "skipped", "nonconv"
    );
    for row in &table.rows {
        println!(
            "{:>7} {:>10.3} {:>10.3} {:>10.3} {:>9} {:>9}",
            row.n, row.ratios["gob"], row.ratios["gbcal"], row.ratios["cal"], row.skipped, row.nonconverged
        );
    }
    println!("runtime: {:.1}s", table.runtime_secs);
    Ok(())
}

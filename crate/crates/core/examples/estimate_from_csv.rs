//! Estimate the average treatment effect from a `z,y,x1..xk` CSV and print a
//! small report for every estimator.
//!
//! ```text
//! cargo run --example estimate_from_csv -- data.csv [ols|logistic|poisson]
//! ```
//!
//! Without arguments a synthetic experiment is written to a temporary file first.

use std::io::Write;

use calibrated_ob::estimators::{evaluate, BaseLearner, Estimator};
use calibrated_ob::experiment::load_csv;
use calibrated_ob::inference::report_for;

fn demo_csv() -> std::io::Result<tempfile::NamedTempFile> {
    let mut file = tempfile::NamedTempFile::new()?;
    writeln!(file, "z,y,age,score")?;
    for i in 0..200 {
        let age = 20.0 + (i * 37 % 45) as f64;
        let score = ((i as f64) * 0.7).sin();
        let z = (i * 7919) % 5 < 2;
        let p = 1.0 / (1.0 + (-(-2.0 + 0.04 * age + score + if z { 0.6 } else { 0.0 })).exp());
        let y = u8::from(((i * 104_729) % 1000) as f64 / 1000.0 < p);
        writeln!(file, "{},{y},{age},{score:.4}", u8::from(z))?;
    }
    file.flush()?;
    Ok(file)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let demo;
    let path = match args.first() {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            demo = demo_csv()?;
            demo.path().to_path_buf()
        }
    };
    let learner: BaseLearner = args
        .get(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(BaseLearner::Logistic);

    let obs = load_csv(&path)?;
    println!(
        "N = {}, treated = {}, control = {}, base learner = {learner}",
        obs.len(),
        obs.n1(),
        obs.n0()
    );
    println!("{:>6} {:>9} {:>9} {:>20}", "est", "estimate", "se", "95% interval");
    for eval in evaluate(&obs, learner, &Estimator::ALL, None)? {
        let r = report_for(&obs, &eval, 0.95)?;
        println!(
            "{:>6} {:>9.4} {:>9.4}   [{:>7.4}, {:>7.4}]",
            r.estimator, r.estimate, r.std_error, r.ci_lower, r.ci_upper
        );
    }
    Ok(())
}

#![allow(dead_code)]

use calibrated_ob::experiment::{sample_allocation, ObservedExperiment};
use calibrated_ob::regression::DesignMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    calibrated_ob::rng::substream(seed, 0x7465_7374, 0, 0, 0)
}

pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_design<R: Rng>(rng: &mut R, n: usize, k: usize) -> DesignMatrix {
    let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| gaussian(rng)).collect()).collect();
    DesignMatrix::from_columns(n, &cols).unwrap()
}

/// Continuous outcomes, nonlinear in x with arm-specific effects.
pub fn continuous_experiment<R: Rng>(rng: &mut R, n: usize, k: usize, n1: usize) -> ObservedExperiment {
    let x = random_design(rng, n, k);
    let alloc = sample_allocation(n, n1, rng).unwrap();
    let y = (0..n)
        .map(|i| {
            let row = x.row(i);
            let lin: f64 = row.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * 0.5 * v).sum();
            let curve: f64 = row.iter().map(|v| v * v).sum::<f64>() * 0.3;
            let shift = if alloc.is_treated(i) {
                1.0 + 0.4 * row.first().copied().unwrap_or(0.0)
            } else {
                0.0
            };
            lin + curve + shift + gaussian(rng)
        })
        .collect();
    ObservedExperiment::new(alloc, y, x).unwrap()
}

/// Binary outcomes from a misspecified (quadratic) logistic response.
pub fn binary_experiment<R: Rng>(rng: &mut R, n: usize, k: usize, n1: usize) -> ObservedExperiment {
    let x = random_design(rng, n, k);
    let alloc = sample_allocation(n, n1, rng).unwrap();
    let y = (0..n)
        .map(|i| {
            let row = x.row(i);
            let eta = 0.8 * row[0] - 0.5 * row[0] * row[0]
                + if alloc.is_treated(i) { 0.7 } else { -0.2 }
                + row.iter().skip(1).sum::<f64>() * 0.3;
            let p = 1.0 / (1.0 + (-eta).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    ObservedExperiment::new(alloc, y, x).unwrap()
}

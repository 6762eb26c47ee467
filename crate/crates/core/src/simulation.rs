//! Binary-outcome benchmark design, Monte Carlo variance ratios and exact
//! randomization distributions.
//!
//! Each unit gets `x ~ U[-5, 5]` and one shared `U ~ U[0, 1]`; the potential
//! outcomes are `y(z) = 1{U <= p_z(x)}` with Gaussian-bump response curves
//! `p0(x) = exp(-(x + 0.85)^2 / 3.38)` and `p1(x) = exp(-(x - 1)^2 / 2)`.
//!
//! Every population and every allocation draws from its own RNG substream
//! keyed by `(seed, N, s, b)`, and results are reduced in index order, so a
//! table is bit-identical for any worker count.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{evaluate, BaseLearner, Estimator};
use crate::experiment::{enumerate_allocations, observe, sample_allocation, FinitePopulation, TreatmentAllocation};
use crate::inference::residual_variance;
use crate::regression::DesignMatrix;
use crate::rng::{substream, DOMAIN_ALLOCATION, DOMAIN_POPULATION};

/// Share of skipped replications above which a population is flagged.
pub const SKIP_FLAG_FRACTION: f64 = 0.05;

/// Control-arm response curve of the benchmark design.
pub fn control_response(x: f64) -> f64 {
    (-(x + 0.85).powi(2) / 3.38).exp()
}

/// Treated-arm response curve of the benchmark design.
pub fn treated_response(x: f64) -> f64 {
    (-(x - 1.0).powi(2) / 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpName {
    /// Uniform covariate, Gaussian-bump binary responses, shared uniform threshold.
    GaussianBumps,
}

/// Population design and arm split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    #[serde(rename = "N")]
    pub n: usize,
    pub covariate_range: [f64; 2],
    pub n1_fraction: f64,
}

impl DgpSpec {
    pub fn new(n: usize) -> Self {
        Self {
            name: DgpName::GaussianBumps,
            n,
            covariate_range: [-5.0, 5.0],
            n1_fraction: 0.3,
        }
    }

    pub fn with_n1_fraction(mut self, fraction: f64) -> Self {
        self.n1_fraction = fraction;
        self
    }

    /// Treated count, `floor(n1_fraction * N)`; the remainder goes to control.
    pub fn n1(&self) -> usize {
        (self.n1_fraction * self.n as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n1_fraction > 0.0 && self.n1_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "n1 fraction {} must lie in (0, 1)",
                self.n1_fraction
            )));
        }
        let [lo, hi] = self.covariate_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(
                "covariate range must be finite with low < high".into(),
            ));
        }
        let n1 = self.n1();
        if n1 < 1 || n1 >= self.n {
            return Err(Error::InvalidTreatedCount { n: self.n, n1 });
        }
        Ok(())
    }
}

/// Draws a population with arbitrary response curves.
pub fn generate_population_with<R, F0, F1>(spec: &DgpSpec, rng: &mut R, p0: F0, p1: F1) -> Result<FinitePopulation>
where
    R: Rng + ?Sized,
    F0: Fn(f64) -> f64,
    F1: Fn(f64) -> f64,
{
    spec.validate()?;
    let [lo, hi] = spec.covariate_range;
    let mut x = Vec::with_capacity(spec.n);
    let mut y0 = Vec::with_capacity(spec.n);
    let mut y1 = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let xi = lo + (hi - lo) * rng.random::<f64>();
        let u: f64 = rng.random();
        x.push(xi);
        y0.push(f64::from(u8::from(u <= p0(xi))));
        y1.push(f64::from(u8::from(u <= p1(xi))));
    }
    FinitePopulation::new(y0, y1, DesignMatrix::from_columns(spec.n, &[x])?)
}

/// Draws a population from the benchmark design.
pub fn generate_population<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<FinitePopulation> {
    generate_population_with(spec, rng, control_response, treated_response)
}

/// The RNG used for population `s` of size `n` under `seed`.
pub fn population_stream(seed: u64, n: usize, s: u64) -> rand_chacha::ChaCha8Rng {
    substream(seed, DOMAIN_POPULATION, n as u64, s, 0)
}

/// The RNG used for allocation `b` of population `s`.
pub fn allocation_stream(seed: u64, n: usize, s: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    substream(seed, DOMAIN_ALLOCATION, n as u64, s, b)
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

fn mean(values: &[f64]) -> f64 {
    let mut acc = KahanSum::default();
    values.iter().for_each(|&v| acc.add(v));
    acc.total() / values.len() as f64
}

/// Sample variance with divisor `len - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let mut acc = KahanSum::default();
    values.iter().for_each(|&v| acc.add((v - m) * (v - m)));
    acc.total() / (values.len() as f64 - 1.0)
}

/// Outcome of one simulated allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDraw {
    pub index: u64,
    /// One estimate per requested estimator, in request order.
    pub estimates: Vec<f64>,
    /// Residual-based variance estimates, when requested.
    pub variances: Option<Vec<f64>>,
    pub base_converged: bool,
}

/// Draws `b` allocations of `pop` and evaluates `estimators` on each, in parallel.
/// Failures are returned per allocation rather than aborting.
#[allow(clippy::too_many_arguments)]
pub fn simulate_allocations(
    pop: &FinitePopulation,
    n1: usize,
    learner: BaseLearner,
    estimators: &[Estimator],
    seed: u64,
    population_index: u64,
    b: usize,
    with_variance: bool,
) -> Vec<Result<AllocationDraw>> {
    let n = pop.len();
    (0..b as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = allocation_stream(seed, n, population_index, index);
            let alloc = sample_allocation(n, n1, &mut rng)?;
            let obs = observe(pop, &alloc)?;
            let evals = evaluate(&obs, learner, estimators, None)?;
            let variances = if with_variance {
                Some(
                    evals
                        .iter()
                        .map(|e| residual_variance(&obs, &e.mu0, &e.mu1))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            Ok(AllocationDraw {
                index,
                estimates: evals.iter().map(|e| e.estimate).collect(),
                variances,
                base_converged: evals.iter().all(|e| e.base_converged),
            })
        })
        .collect()
}

/// Per-population summary inside a Monte Carlo row.
#[derive(Debug, Clone, PartialEq)]
struct PopulationSummary {
    /// `var(e) / var(unadj)` per non-baseline estimator; `None` when unusable.
    ratios: Option<Vec<f64>>,
    variances: Option<Vec<f64>>,
    skipped: usize,
    nonconverged: usize,
}

/// One row of the variance-ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub n1: usize,
    /// Mean over populations of `var(estimator) / var(unadj)`.
    pub ratios: BTreeMap<String, f64>,
    /// Mean over populations of each estimator's randomization variance.
    pub variances: BTreeMap<String, f64>,
    /// Replications excluded because an estimator failed.
    pub skipped: usize,
    /// Replications in which a base learner did not converge.
    pub nonconverged: usize,
    /// Populations whose skip share exceeded [`SKIP_FLAG_FRACTION`].
    pub flagged_populations: usize,
    /// Populations that contributed to the averages.
    pub populations_used: usize,
}

/// Variance ratios for every configured population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloTable {
    pub rows: Vec<MonteCarloRow>,
    #[serde(rename = "S")]
    pub populations: usize,
    #[serde(rename = "B")]
    pub allocations: usize,
    pub seed: u64,
    pub family: BaseLearner,
    pub estimators: Vec<Estimator>,
    /// Wall-clock seconds; kept out of serialized output so files stay reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl MonteCarloTable {
    pub fn row(&self, n: usize) -> Option<&MonteCarloRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// Settings for [`run_monte_carlo`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub sizes: Vec<usize>,
    pub n1_fraction: f64,
    pub populations: usize,
    pub allocations: usize,
    pub learner: BaseLearner,
    /// Estimators compared against `unadj`; `unadj` itself is always computed.
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1000],
            n1_fraction: 0.3,
            populations: 1000,
            allocations: 1000,
            learner: BaseLearner::Logistic,
            estimators: vec![Estimator::Gob, Estimator::Gbcal, Estimator::Cal],
            seed: 0,
            workers: 0,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one population size is required".into(),
            ));
        }
        if self.populations < 1 {
            return Err(Error::InvalidArgument("S must be at least 1".into()));
        }
        if self.allocations < 2 {
            return Err(Error::InvalidArgument("B must be at least 2 for a variance".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        for &n in &self.sizes {
            DgpSpec::new(n).with_n1_fraction(self.n1_fraction).validate()?;
        }
        Ok(())
    }

    fn evaluated(&self) -> Vec<Estimator> {
        let mut all = vec![Estimator::Unadj];
        all.extend(self.estimators.iter().copied().filter(|&e| e != Estimator::Unadj));
        all
    }
}

/// Runs `f` on a pool with `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn summarize_population(
    spec: &DgpSpec,
    config: &MonteCarloConfig,
    estimators: &[Estimator],
    s: u64,
) -> Result<PopulationSummary> {
    let pop = generate_population(spec, &mut population_stream(config.seed, spec.n, s))?;
    let draws = simulate_allocations(
        &pop,
        spec.n1(),
        config.learner,
        estimators,
        config.seed,
        s,
        config.allocations,
        false,
    );
    let mut skipped = 0;
    let mut nonconverged = 0;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.len()); estimators.len()];
    for draw in draws {
        match draw {
            Ok(d) => {
                nonconverged += usize::from(!d.base_converged);
                for (col, v) in columns.iter_mut().zip(d.estimates) {
                    col.push(v);
                }
            }
            Err(_) => skipped += 1,
        }
    }
    let usable = columns[0].len() >= 2;
    let variances: Option<Vec<f64>> = usable.then(|| columns.iter().map(|c| sample_variance(c)).collect());
    let ratios = variances
        .as_ref()
        .and_then(|v| (v[0] > 0.0).then(|| v[1..].iter().map(|e| e / v[0]).collect()));
    Ok(PopulationSummary {
        ratios,
        variances,
        skipped,
        nonconverged,
    })
}

fn run_row(config: &MonteCarloConfig, n: usize) -> Result<MonteCarloRow> {
    let spec = DgpSpec::new(n).with_n1_fraction(config.n1_fraction);
    let estimators = config.evaluated();
    let summaries: Vec<PopulationSummary> = (0..config.populations as u64)
        .into_par_iter()
        .map(|s| summarize_population(&spec, config, &estimators, s))
        .collect::<Result<_>>()?;

    let mut ratio_sums = vec![KahanSum::default(); estimators.len() - 1];
    let mut var_sums = vec![KahanSum::default(); estimators.len()];
    let (mut used, mut skipped, mut nonconverged, mut flagged) = (0usize, 0, 0, 0);
    let flag_limit = SKIP_FLAG_FRACTION * config.allocations as f64;
    for summary in &summaries {
        skipped += summary.skipped;
        nonconverged += summary.nonconverged;
        if summary.skipped as f64 > flag_limit {
            flagged += 1;
        }
        if let (Some(r), Some(v)) = (&summary.ratios, &summary.variances) {
            used += 1;
            r.iter().zip(ratio_sums.iter_mut()).for_each(|(x, acc)| acc.add(*x));
            v.iter().zip(var_sums.iter_mut()).for_each(|(x, acc)| acc.add(*x));
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(format!(
            "no usable populations at N={n}: every population had degenerate variances"
        )));
    }
    let ratios = estimators[1..]
        .iter()
        .zip(&ratio_sums)
        .map(|(e, acc)| (e.name().to_string(), acc.total() / used as f64))
        .collect();
    let variances = estimators
        .iter()
        .zip(&var_sums)
        .map(|(e, acc)| (e.name().to_string(), acc.total() / used as f64))
        .collect();
    Ok(MonteCarloRow {
        n,
        n1: spec.n1(),
        ratios,
        variances,
        skipped,
        nonconverged,
        flagged_populations: flagged,
        populations_used: used,
    })
}

/// For each size: draw S populations, B allocations of each, compute every
/// estimator, and average `var(estimator) / var(unadj)` over populations.
pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<MonteCarloTable> {
    config.validate()?;
    let start = Instant::now();
    let rows = with_workers(config.workers, || {
        config
            .sizes
            .iter()
            .map(|&n| run_row(config, n))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(MonteCarloTable {
        rows,
        populations: config.populations,
        allocations: config.allocations,
        seed: config.seed,
        family: config.learner,
        estimators: config.evaluated(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Exact randomization distribution of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub estimator: Estimator,
    pub mean: f64,
    /// Variance over all allocations (divisor = number of allocations).
    pub variance: f64,
    /// Value under every allocation, in enumeration order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    #[serde(rename = "N")]
    pub n: usize,
    pub n1: usize,
    pub allocations: usize,
    pub tau_bar: f64,
    pub estimators: Vec<ExactSummary>,
}

impl ExactDistribution {
    pub fn summary(&self, estimator: Estimator) -> Option<&ExactSummary> {
        self.estimators.iter().find(|s| s.estimator == estimator)
    }
}

/// Evaluates every estimator under every allocation with `n1` treated units.
pub fn exact_randomization_distribution(
    pop: &FinitePopulation,
    n1: usize,
    learner: BaseLearner,
    estimators: &[Estimator],
    cap: usize,
) -> Result<ExactDistribution> {
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    let allocations = enumerate_allocations(pop.len(), n1, cap)?;
    let per_alloc: Vec<Vec<f64>> = allocations
        .par_iter()
        .map(|a: &TreatmentAllocation| {
            let obs = observe(pop, a)?;
            Ok(evaluate(&obs, learner, estimators, None)?
                .into_iter()
                .map(|e| e.estimate)
                .collect())
        })
        .collect::<Result<_>>()?;
    let count = per_alloc.len() as f64;
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(j, &estimator)| {
            let values: Vec<f64> = per_alloc.iter().map(|v| v[j]).collect();
            let m = mean(&values);
            let mut acc = KahanSum::default();
            values.iter().for_each(|v| acc.add((v - m) * (v - m)));
            ExactSummary {
                estimator,
                mean: m,
                variance: acc.total() / count,
                values,
            }
        })
        .collect();
    Ok(ExactDistribution {
        n: pop.len(),
        n1,
        allocations: allocations.len(),
        tau_bar: pop.tau_bar(),
        estimators: summaries,
    })
}

//! Finite populations, completely randomized allocations and observed experiments.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::regression::DesignMatrix;

/// Default upper bound on the number of allocations [`enumerate_allocations`] will produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 200_000;

/// Both potential outcomes and covariates for every unit. Only available in
/// simulation or for exact oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    y0: Vec<f64>,
    y1: Vec<f64>,
    x: DesignMatrix,
}

impl FinitePopulation {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>, x: DesignMatrix) -> Result<Self> {
        if y0.len() != y1.len() || y0.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y0 has {} units, y1 has {}, covariates have {}",
                y0.len(),
                y1.len(),
                x.nrows()
            )));
        }
        if y0.iter().chain(&y1).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential outcomes"));
        }
        Ok(Self { y0, y1, x })
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn x(&self) -> &DesignMatrix {
        &self.x
    }

    /// Sample average treatment effect, the mean of `y1 - y0`.
    pub fn tau_bar(&self) -> f64 {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).sum::<f64>() / self.len() as f64
    }
}

/// A treatment vector with both arms non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreatmentAllocation {
    z: Vec<bool>,
    n1: usize,
}

impl TreatmentAllocation {
    pub fn new(z: Vec<bool>) -> Result<Self> {
        let n1 = z.iter().filter(|&&t| t).count();
        let n0 = z.len() - n1;
        if n1 == 0 || n0 == 0 {
            return Err(Error::ArmEmpty { n1, n0 });
        }
        Ok(Self { z, n1 })
    }

    /// Allocation of `n` units treating exactly the listed indices.
    pub fn from_treated(n: usize, treated: &[usize]) -> Result<Self> {
        let mut z = vec![false; n];
        for &i in treated {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "treated index {i} out of range for N={n}"
                )));
            }
            z[i] = true;
        }
        Self::new(z)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i]
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.z.len() - self.n1
    }

    /// Indices of units in arm `treated` (true = treatment), ascending.
    pub fn arm(&self, treated: bool) -> Vec<usize> {
        (0..self.z.len()).filter(|&i| self.z[i] == treated).collect()
    }
}

/// Treatment vector, observed outcomes `y_i(Z_i)` and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedExperiment {
    allocation: TreatmentAllocation,
    y_obs: Vec<f64>,
    x: DesignMatrix,
    covariate_names: Vec<String>,
}

impl ObservedExperiment {
    pub fn new(allocation: TreatmentAllocation, y_obs: Vec<f64>, x: DesignMatrix) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(allocation, y_obs, x, names)
    }

    pub fn with_names(
        allocation: TreatmentAllocation,
        y_obs: Vec<f64>,
        x: DesignMatrix,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if allocation.len() != y_obs.len() || y_obs.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "allocation has {} units, outcomes {}, covariates {}",
                allocation.len(),
                y_obs.len(),
                x.nrows()
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch("covariate names do not match columns".into()));
        }
        if y_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observed outcomes"));
        }
        Ok(Self {
            allocation,
            y_obs,
            x,
            covariate_names,
        })
    }

    pub fn len(&self) -> usize {
        self.y_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_obs.is_empty()
    }

    pub fn allocation(&self) -> &TreatmentAllocation {
        &self.allocation
    }

    pub fn y_obs(&self) -> &[f64] {
        &self.y_obs
    }

    pub fn x(&self) -> &DesignMatrix {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n1(&self) -> usize {
        self.allocation.n1()
    }

    pub fn n0(&self) -> usize {
        self.allocation.n0()
    }

    /// Observed outcomes of one arm, in unit order.
    pub fn arm_outcomes(&self, treated: bool) -> Vec<f64> {
        self.allocation
            .arm(treated)
            .into_iter()
            .map(|i| self.y_obs[i])
            .collect()
    }

    /// Same experiment with every outcome passed through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::with_names(
            self.allocation.clone(),
            self.y_obs.iter().map(|&v| f(v)).collect(),
            self.x.clone(),
            self.covariate_names.clone(),
        )
    }
}

/// Uniform draw from all allocations of `n` units with exactly `n1` treated,
/// by a partial Fisher-Yates shuffle.
pub fn sample_allocation<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Result<TreatmentAllocation> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidTreatedCount { n, n1 });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n1 {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    TreatmentAllocation::from_treated(n, &idx[..n1])
}

/// Reveals `y1` for treated units and `y0` for controls.
pub fn observe(pop: &FinitePopulation, alloc: &TreatmentAllocation) -> Result<ObservedExperiment> {
    if alloc.len() != pop.len() {
        return Err(Error::DimensionMismatch(format!(
            "allocation has {} units, population has {}",
            alloc.len(),
            pop.len()
        )));
    }
    let y_obs = (0..pop.len())
        .map(|i| if alloc.is_treated(i) { pop.y1[i] } else { pop.y0[i] })
        .collect();
    ObservedExperiment::new(alloc.clone(), y_obs, pop.x.clone())
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Every allocation of `n` units with `n1` treated, exactly once. Ordered
/// lexicographically by the ascending list of treated indices.
pub fn enumerate_allocations(n: usize, n1: usize, cap: usize) -> Result<Vec<TreatmentAllocation>> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidTreatedCount { n, n1 });
    }
    let count = binomial(n, n1);
    if count > cap as u128 {
        return Err(Error::CapExceeded { n, n1, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut comb: Vec<usize> = (0..n1).collect();
    loop {
        out.push(TreatmentAllocation::from_treated(n, &comb)?);
        // advance to the next combination
        let mut i = n1;
        while i > 0 && comb[i - 1] == n - n1 + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        comb[i - 1] += 1;
        for j in i..n1 {
            comb[j] = comb[j - 1] + 1;
        }
    }
    Ok(out)
}

fn parse_error(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message,
    }
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

/// Reads a headered numeric CSV whose header starts with `expected_lead`.
fn read_numeric_csv(path: &Path, expected_lead: &[&str]) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(path, format!("header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    if headers.len() < expected_lead.len() || headers[..expected_lead.len()] != *expected_lead {
        return Err(parse_error(
            path,
            format!(
                "header must start with `{}`, found `{}`",
                expected_lead.join(","),
                headers.join(",")
            ),
        ));
    }
    if let Some(j) = headers.iter().position(String::is_empty) {
        return Err(parse_error(path, format!("column {} has an empty header", j + 1)));
    }

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| parse_error(path, format!("row {row}: {e}")))?;
        let mut values = Vec::with_capacity(headers.len());
        for (j, cell) in record.iter().enumerate() {
            let name = &headers[j];
            if cell.is_empty() {
                return Err(parse_error(path, format!("row {row}, column `{name}`: missing value")));
            }
            let v: f64 = cell.parse().map_err(|_| {
                parse_error(
                    path,
                    format!("row {row}, column `{name}`: cannot parse `{cell}` as a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    format!("row {row}, column `{name}`: non-finite value `{cell}`"),
                ));
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(RawTable { headers, rows })
}

fn covariates(table: &RawTable, skip: usize) -> Result<DesignMatrix> {
    let k = table.headers.len() - skip;
    DesignMatrix::new(nalgebra::DMatrix::from_fn(table.rows.len(), k, |i, j| {
        table.rows[i][skip + j]
    }))
}

/// Loads an observed experiment from a CSV with header `z,y,x1,...,xk`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<ObservedExperiment> {
    let path = path.as_ref();
    let table = read_numeric_csv(path, &["z", "y"])?;
    let mut z = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        match row[0] {
            1.0 => z.push(true),
            0.0 => z.push(false),
            v => {
                return Err(parse_error(
                    path,
                    format!("row {}, column `z`: treatment must be 0 or 1, got {v}", r + 1),
                ))
            }
        }
    }
    let alloc = TreatmentAllocation::new(z)?;
    let y = table.rows.iter().map(|r| r[1]).collect();
    let x = covariates(&table, 2)?;
    ObservedExperiment::with_names(alloc, y, x, table.headers[2..].to_vec())
}

/// Loads a finite population from a CSV with header `y0,y1,x1,...,xk`.
pub fn load_population_csv(path: impl AsRef<Path>) -> Result<FinitePopulation> {
    let table = read_numeric_csv(path.as_ref(), &["y0", "y1"])?;
    let y0 = table.rows.iter().map(|r| r[0]).collect();
    let y1 = table.rows.iter().map(|r| r[1]).collect();
    FinitePopulation::new(y0, y1, covariates(&table, 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use std::collections::HashMap;
    use std::io::Write;

    fn toy_population() -> FinitePopulation {
        FinitePopulation::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            DesignMatrix::from_rows(&[vec![0.1], vec![0.2]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn observe_picks_arm_outcome() {
        let pop = toy_population();
        let obs = observe(&pop, &TreatmentAllocation::new(vec![true, false]).unwrap()).unwrap();
        assert_eq!(obs.y_obs(), &[1.0, 0.0]);
        assert_eq!((obs.n1(), obs.n0()), (1, 1));
    }

    #[test]
    fn observe_null_population_ignores_allocation() {
        let y = vec![0.5, 1.5, -2.0];
        let pop = FinitePopulation::new(y.clone(), y.clone(), DesignMatrix::empty(3).unwrap()).unwrap();
        for alloc in enumerate_allocations(3, 1, 10).unwrap() {
            assert_eq!(observe(&pop, &alloc).unwrap().y_obs(), y.as_slice());
        }
    }

    #[test]
    fn observe_with_one_control() {
        let pop = FinitePopulation::new(vec![-1.0; 5], vec![1.0; 5], DesignMatrix::empty(5).unwrap()).unwrap();
        let mut rng = substream(1, 0, 0, 0, 0);
        let alloc = sample_allocation(5, 4, &mut rng).unwrap();
        let obs = observe(&pop, &alloc).unwrap();
        assert_eq!(obs.y_obs().iter().filter(|&&v| v == -1.0).count(), 1);
    }

    #[test]
    fn observe_length_mismatch() {
        let pop = toy_population();
        let alloc = TreatmentAllocation::new(vec![true, false, false]).unwrap();
        assert!(matches!(observe(&pop, &alloc), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn sampler_rejects_degenerate_arms() {
        let mut rng = substream(0, 0, 0, 0, 0);
        assert!(matches!(
            sample_allocation(5, 5, &mut rng),
            Err(Error::InvalidTreatedCount { n: 5, n1: 5 })
        ));
        assert!(sample_allocation(5, 0, &mut rng).is_err());
    }

    #[test]
    fn sampler_two_units_is_fair() {
        let mut rng = substream(11, 0, 0, 0, 0);
        let first = (0..10_000)
            .filter(|_| sample_allocation(2, 1, &mut rng).unwrap().is_treated(0))
            .count();
        assert!((first as f64 / 10_000.0 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn sampler_is_uniform_over_all_allocations() {
        // Reference: every one of the C(6,3) = 20 enumerated allocations should
        // appear with probability 1/20.
        let support = enumerate_allocations(6, 3, 100).unwrap();
        assert_eq!(support.len(), 20);
        let mut counts: HashMap<Vec<bool>, usize> = support.iter().map(|a| (a.z().to_vec(), 0)).collect();
        let draws = 100_000;
        let mut rng = substream(5, 0, 0, 0, 0);
        for _ in 0..draws {
            *counts.get_mut(sample_allocation(6, 3, &mut rng).unwrap().z()).unwrap() += 1;
        }
        let expected = draws as f64 / 20.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 19 degrees of freedom; 43.8 is the 0.999 quantile.
        assert!(chi2 < 43.8, "chi2 = {chi2}");
        for &c in counts.values() {
            assert!((c as f64 / draws as f64 - 0.05).abs() <= 0.01);
        }
    }

    #[test]
    fn sampler_marginals() {
        let (n, n1, draws) = (7, 3, 100_000);
        let mut hits = vec![0usize; n];
        let mut rng = substream(9, 0, 0, 0, 0);
        for _ in 0..draws {
            let a = sample_allocation(n, n1, &mut rng).unwrap();
            assert_eq!(a.n1(), n1);
            for (i, h) in hits.iter_mut().enumerate() {
                *h += usize::from(a.is_treated(i));
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - n1 as f64 / n as f64).abs() <= 0.01);
        }
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_allocations(4, 2, 100).unwrap().len(), 6);
        assert_eq!(enumerate_allocations(6, 3, 100).unwrap().len(), 20);
        assert!(matches!(
            enumerate_allocations(30, 15, DEFAULT_ENUMERATION_CAP),
            Err(Error::CapExceeded { .. })
        ));
        for n in 2..=12 {
            for n1 in 1..n {
                let all = enumerate_allocations(n, n1, DEFAULT_ENUMERATION_CAP).unwrap();
                assert_eq!(all.len() as u128, binomial(n, n1));
                let distinct: std::collections::HashSet<_> = all.iter().collect();
                assert_eq!(distinct.len(), all.len());
            }
        }
    }

    #[test]
    fn enumeration_order_is_lexicographic_in_treated_indices() {
        let all = enumerate_allocations(4, 2, 100).unwrap();
        let sets: Vec<Vec<usize>> = all.iter().map(|a| a.arm(true)).collect();
        assert_eq!(
            sets,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_two_rows() {
        let f = write_tmp("z,y,x1\n1,1.0,0.3\n0,0.0,-0.2\n");
        let obs = load_csv(f.path()).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.n1(), 1);
        assert_eq!(obs.x().get(1, 0), -0.2);
        assert_eq!(obs.covariate_names(), &["x1".to_string()]);
    }

    #[test]
    fn csv_bad_treatment_names_row() {
        let f = write_tmp("z,y,x1\n1,1.0,0.3\n0,0.0,-0.2\n2,1.0,0.0\n");
        let msg = load_csv(f.path()).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "{msg}");
    }

    #[test]
    fn csv_without_covariates() {
        let f = write_tmp("z,y\n1,2\n0,1\n1,3\n");
        let obs = load_csv(f.path()).unwrap();
        assert_eq!(obs.x().ncols(), 0);
    }

    #[test]
    fn csv_errors() {
        let one_arm = write_tmp("z,y\n1,2\n1,1\n");
        assert!(load_csv(one_arm.path()).unwrap_err().to_string().contains("arm empty"));
        let empty = write_tmp("");
        assert!(matches!(load_csv(empty.path()), Err(Error::EmptyInput(_))));
        let header_only = write_tmp("z,y,x1\n");
        assert!(matches!(load_csv(header_only.path()), Err(Error::EmptyInput(_))));
        let missing = write_tmp("z,y,x1\n1,2,\n0,1,3\n");
        assert!(load_csv(missing.path())
            .unwrap_err()
            .to_string()
            .contains("row 1, column `x1`"));
        let ragged = write_tmp("z,y,x1\n1,2,1\n0,1\n");
        assert!(load_csv(ragged.path()).unwrap_err().to_string().contains("row 2"));
        let nan = write_tmp("z,y\n1,NaN\n0,1\n");
        assert!(load_csv(nan.path()).is_err());
        let wrong_header = write_tmp("y,z\n1,0\n0,1\n");
        assert!(load_csv(wrong_header.path()).is_err());
        assert!(matches!(load_csv("/nonexistent/file.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn population_csv() {
        let f = write_tmp("y0,y1,x1,x2\n0,1,0.5,1\n1,1,-0.5,2\n");
        let pop = load_population_csv(f.path()).unwrap();
        assert_eq!(pop.len(), 2);
        assert_eq!(pop.x().ncols(), 2);
        assert_eq!(pop.tau_bar(), 0.5);
    }
}

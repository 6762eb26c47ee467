//! Deterministic regression fitters: minimum-norm ordinary least squares and
//! canonical-link GLMs (logistic, Poisson) fitted by iteratively reweighted
//! least squares.
//!
//! Least squares goes through an SVD of the (column-centred) design so that
//! exactly or nearly collinear features resolve to the Moore-Penrose solution
//! and predictions stay unique. Singular values below
//! `max(rows, cols) * eps * s_max` are treated as zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real design matrix, one row per unit. The intercept column is never
/// stored; fitters add it on request.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps a matrix after checking it has at least one row and only finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::DimensionMismatch("design matrix needs at least one row".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(Self { values })
    }

    /// Builds from row vectors, all of the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} columns, expected {ncols}",
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    /// Builds from column vectors of a common length `rows`.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if let Some((j, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != rows) {
            return Err(Error::DimensionMismatch(format!(
                "column {j} has length {}, expected {rows}",
                c.len()
            )));
        }
        Self::new(DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    /// A design with `rows` units and no covariates.
    pub fn empty(rows: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, 0))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.values.column(col).iter().copied().collect()
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.values.row(row).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Sub-design restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DimensionMismatch("row selection is empty".into()));
        }
        Ok(Self {
            values: self.values.select_rows(rows),
        })
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &DesignMatrix) -> Result<Self> {
        if self.nrows() != other.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} rows beside {} rows",
                self.nrows(),
                other.nrows()
            )));
        }
        let (n, a, b) = (self.nrows(), self.ncols(), other.ncols());
        Ok(Self {
            values: DMatrix::from_fn(n, a + b, |i, j| {
                if j < a {
                    self.values[(i, j)]
                } else {
                    other.values[(i, j - a)]
                }
            }),
        })
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    /// Set when some direction of the design was dropped by the pseudoinverse cutoff.
    pub rank_deficient: bool,
    /// Rank of the (centred, when an intercept is fitted) design.
    pub effective_rank: usize,
}

impl LinearFit {
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        predict_linear(self, x)
    }
}

/// GLM families with canonical links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::Poisson => "poisson",
        }
    }

    fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Logistic => sigmoid(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Variance function evaluated at the mean; equals the IRLS weight for canonical links.
    fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Logistic => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    fn check_outcome(self, row: usize, y: f64) -> Result<()> {
        let ok = match self {
            Family::Logistic => y == 0.0 || y == 1.0,
            Family::Poisson => y >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOutcome {
                family: self.name(),
                row,
                value: y,
            })
        }
    }
}

/// Stopping rules for IRLS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    /// Converged once the sup-norm of the score drops to this value.
    pub score_tol: f64,
    /// Stop when the sup-norm of the coefficient step is this small.
    pub step_tol: f64,
    /// A small score only counts as convergence when the pending Newton step
    /// is below this bound as well.
    pub newton_step_tol: f64,
    pub max_iter: usize,
    /// Stop and flag divergence once any training `|eta|` exceeds this value.
    pub eta_cap: f64,
}

impl GlmOptions {
    pub fn for_family(family: Family) -> Self {
        Self {
            score_tol: 1e-8,
            step_tol: 1e-10,
            newton_step_tol: 1e-6,
            max_iter: 100,
            eta_cap: match family {
                Family::Logistic => 30.0,
                Family::Poisson => 50.0,
            },
        }
    }
}

/// Result of an IRLS fit. Non-converged fits still carry the last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub converged: bool,
    /// Linear predictor blew past the divergence cap (separation or a degenerate outcome).
    pub separated: bool,
    pub iterations: usize,
    /// Sup-norm of the score at the returned coefficients.
    pub max_abs_score: f64,
}

impl GlmFit {
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        predict_glm(self, x)
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn check_y(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "outcome has length {}, design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcome"));
    }
    Ok(())
}

/// Minimum-norm least-squares solution of `a * beta = b` via SVD.
/// Returns the solution and the numerical rank.
fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, max_dim: usize) -> (DVector<f64>, usize) {
    let p = a.ncols();
    if p == 0 || a.nrows() == 0 {
        return (DVector::zeros(p), 0);
    }
    // faer's SVD rather than nalgebra's: the latter can return a decomposition
    // that does not reproduce `a` when two columns are collinear up to rounding.
    let m = faer::Mat::from_fn(a.nrows(), p, |i, j| a[(i, j)]);
    let Ok(svd) = m.thin_svd() else {
        return (DVector::zeros(p), 0);
    };
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let s_max = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    let tol = max_dim as f64 * f64::EPSILON * s_max;
    let mut beta = DVector::zeros(p);
    let mut rank = 0;
    for i in 0..s.nrows() {
        if s[i] > tol && s[i] > 0.0 {
            rank += 1;
            let coef = (0..a.nrows()).map(|r| u[(r, i)] * b[r]).sum::<f64>() / s[i];
            for j in 0..p {
                beta[j] += coef * v[(j, i)];
            }
        }
    }
    (beta, rank)
}

/// Ordinary least squares of `y` on `x`, optionally with an intercept.
///
/// With an intercept the columns are centred first and the intercept is
/// recovered from the means, so constant columns simply fall out of the rank.
pub fn fit_ols(x: &DesignMatrix, y: &[f64], add_intercept: bool) -> Result<LinearFit> {
    check_y(x, y)?;
    let (n, k) = (x.nrows(), x.ncols());
    let yv = DVector::from_column_slice(y);

    if !add_intercept {
        let (beta, rank) = pinv_solve(x.as_matrix(), &yv, n.max(k));
        return Ok(LinearFit {
            intercept: 0.0,
            slopes: beta.iter().copied().collect(),
            rank_deficient: rank < k,
            effective_rank: rank,
        });
    }

    let y_mean = yv.mean();
    if k == 0 {
        return Ok(LinearFit {
            intercept: y_mean,
            slopes: Vec::new(),
            rank_deficient: false,
            effective_rank: 0,
        });
    }
    let means: Vec<f64> = (0..k).map(|j| x.as_matrix().column(j).mean()).collect();
    let centred = DMatrix::from_fn(n, k, |i, j| x.get(i, j) - means[j]);
    let yc = yv.map(|v| v - y_mean);
    let (beta, rank) = pinv_solve(&centred, &yc, n.max(k + 1));
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearFit {
        intercept,
        slopes: beta.iter().copied().collect(),
        rank_deficient: rank < k,
        effective_rank: rank,
    })
}

fn linear_predictor(intercept: f64, slopes: &[f64], x: &DesignMatrix) -> Result<Vec<f64>> {
    if x.ncols() != slopes.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, fit has {} slopes",
            x.ncols(),
            slopes.len()
        )));
    }
    let m = x.as_matrix();
    Ok((0..x.nrows())
        .map(|i| intercept + slopes.iter().enumerate().map(|(j, b)| b * m[(i, j)]).sum::<f64>())
        .collect())
}

/// `intercept + X * slopes`, row by row.
pub fn predict_linear(fit: &LinearFit, x: &DesignMatrix) -> Result<Vec<f64>> {
    linear_predictor(fit.intercept, &fit.slopes, x)
}

/// Inverse link of the linear predictor: probabilities for logistic, means for Poisson.
pub fn predict_glm(fit: &GlmFit, x: &DesignMatrix) -> Result<Vec<f64>> {
    Ok(linear_predictor(fit.intercept, &fit.slopes, x)?
        .into_iter()
        .map(|eta| fit.family.inverse_link(eta))
        .collect())
}

fn full_design(x: &DesignMatrix, add_intercept: bool) -> DMatrix<f64> {
    let (n, k) = (x.nrows(), x.ncols());
    let off = usize::from(add_intercept);
    DMatrix::from_fn(n, k + off, |i, j| {
        if add_intercept && j == 0 {
            1.0
        } else {
            x.get(i, j - off)
        }
    })
}

fn coef_len_check(x: &DesignMatrix, add_intercept: bool, coef: &[f64]) -> Result<()> {
    let p = x.ncols() + usize::from(add_intercept);
    if coef.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "expected {p} coefficients, got {}",
            coef.len()
        )));
    }
    Ok(())
}

/// Family log-likelihood at `coef` (intercept first when `add_intercept`).
/// The Poisson version omits the `-ln(y!)` constant.
pub fn glm_log_likelihood(
    x: &DesignMatrix,
    y: &[f64],
    family: Family,
    add_intercept: bool,
    coef: &[f64],
) -> Result<f64> {
    check_y(x, y)?;
    coef_len_check(x, add_intercept, coef)?;
    let eta = full_design(x, add_intercept) * DVector::from_column_slice(coef);
    Ok(log_likelihood_eta(family, y, eta.as_slice()))
}

fn log_likelihood_eta(family: Family, y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| match family {
            Family::Logistic => yi * e - softplus(e),
            Family::Poisson => yi * e - e.exp(),
        })
        .sum()
}

/// Analytic score `A^T (y - mu)` of the log-likelihood, `A` the design with optional intercept.
pub fn glm_score(x: &DesignMatrix, y: &[f64], family: Family, add_intercept: bool, coef: &[f64]) -> Result<Vec<f64>> {
    check_y(x, y)?;
    coef_len_check(x, add_intercept, coef)?;
    let a = full_design(x, add_intercept);
    let eta = &a * DVector::from_column_slice(coef);
    let resid = DVector::from_iterator(
        y.len(),
        y.iter().zip(eta.iter()).map(|(yi, e)| yi - family.inverse_link(*e)),
    );
    Ok((a.transpose() * resid).iter().copied().collect())
}

/// Maximum-likelihood GLM fit with default stopping rules.
pub fn fit_glm(x: &DesignMatrix, y: &[f64], family: Family, add_intercept: bool) -> Result<GlmFit> {
    fit_glm_with(x, y, family, add_intercept, &GlmOptions::for_family(family))
}

/// IRLS (Newton-Raphson for canonical links) with step halving.
pub fn fit_glm_with(
    x: &DesignMatrix,
    y: &[f64],
    family: Family,
    add_intercept: bool,
    opts: &GlmOptions,
) -> Result<GlmFit> {
    check_y(x, y)?;
    for (i, &v) in y.iter().enumerate() {
        family.check_outcome(i, v)?;
    }
    let a = full_design(x, add_intercept);
    let p = a.ncols();
    let yv = DVector::from_column_slice(y);

    let mut beta = DVector::zeros(p);
    if add_intercept && family == Family::Poisson {
        beta[0] = (yv.mean() + 1e-6).ln();
    }

    let mut eta = &a * &beta;
    let mut loglik = log_likelihood_eta(family, y, eta.as_slice());
    let mut converged = false;
    let mut separated = false;
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if eta.amax() > opts.eta_cap {
            separated = true;
            break;
        }
        let mu = eta.map(|e| family.inverse_link(e));
        let score = a.transpose() * (&yv - &mu);
        let w = mu.map(|m| family.variance(m));
        let mut weighted = a.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = a.transpose() * weighted;
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => pinv_solve(&hessian, &score, p).0,
        };
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        // Under separation the score vanishes while the Newton step does not,
        // so a small score alone is not convergence.
        if score.amax() <= opts.score_tol && step.amax() <= opts.newton_step_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Newton steps can overshoot for Poisson; halve until the likelihood does not drop.
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_eta = &a * &candidate;
        let mut cand_ll = log_likelihood_eta(family, y, cand_eta.as_slice());
        for _ in 0..30 {
            if cand_ll.is_finite() && cand_ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                break;
            }
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_eta = &a * &candidate;
            cand_ll = log_likelihood_eta(family, y, cand_eta.as_slice());
        }
        let step_norm = (&step * scale).amax();
        beta = candidate;
        eta = cand_eta;
        loglik = cand_ll;

        if step_norm <= opts.step_tol {
            stalled = true;
            break;
        }
    }

    let mu = eta.map(|e| family.inverse_link(e));
    let max_abs_score = (a.transpose() * (&yv - &mu)).amax();
    if !separated && eta.amax() > opts.eta_cap {
        separated = true;
    }
    converged = converged || (stalled && !separated && max_abs_score <= opts.score_tol);

    let (intercept, slopes) = if add_intercept {
        (beta[0], beta.iter().skip(1).copied().collect())
    } else {
        (0.0, beta.iter().copied().collect())
    };
    Ok(GlmFit {
        family,
        intercept,
        slopes,
        converged,
        separated,
        iterations,
        max_abs_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DesignMatrix {
        DesignMatrix::from_columns(v.len(), &[v.to_vec()]).unwrap()
    }

    #[test]
    fn ols_exact_line() {
        let fit = fit_ols(&col(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0], true).unwrap();
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.slopes[0] - 2.0).abs() < 1e-12);
        assert!(!fit.rank_deficient);
        assert_eq!(fit.effective_rank, 1);
    }

    #[test]
    fn ols_collinear_columns_interpolate() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let y = [1.0, 2.0, 3.0];
        for intercept in [true, false] {
            let fit = fit_ols(&x, &y, intercept).unwrap();
            assert!(fit.rank_deficient);
            assert_eq!(fit.effective_rank, 1);
            let pred = fit.predict(&x).unwrap();
            for (p, t) in pred.iter().zip(&y) {
                assert!((p - t).abs() < 1e-10, "{p} vs {t}");
            }
        }
    }

    #[test]
    fn ols_intercept_only_is_mean() {
        let fit = fit_ols(&DesignMatrix::empty(2).unwrap(), &[5.0, 7.0], true).unwrap();
        assert_eq!(fit.intercept, 6.0);
        assert!(fit.slopes.is_empty());
    }

    #[test]
    fn ols_constant_column_is_dropped_by_rank() {
        let x = col(&[3.0, 3.0, 3.0, 3.0]);
        let fit = fit_ols(&x, &[1.0, 2.0, 3.0, 6.0], true).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.slopes, vec![0.0]);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ols_errors() {
        assert!(matches!(
            fit_ols(&col(&[1.0, 2.0]), &[1.0], true),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            fit_ols(&col(&[1.0, 2.0]), &[1.0, f64::NAN], true),
            Err(Error::NonFinite(_))
        ));
        assert!(DesignMatrix::from_rows(&[vec![f64::INFINITY]]).is_err());
        assert!(DesignMatrix::from_rows(&[]).is_err());
    }

    #[test]
    fn predict_linear_examples() {
        let fit = LinearFit {
            intercept: 1.0,
            slopes: vec![2.0],
            rank_deficient: false,
            effective_rank: 1,
        };
        assert_eq!(predict_linear(&fit, &col(&[0.0])).unwrap(), vec![1.0]);
        let fit = LinearFit {
            intercept: 0.0,
            slopes: vec![1.0, 1.0],
            rank_deficient: false,
            effective_rank: 2,
        };
        let x = DesignMatrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(predict_linear(&fit, &x).unwrap(), vec![5.0]);
        assert!(predict_linear(&fit, &col(&[1.0])).is_err());
    }

    #[test]
    fn logistic_perfect_separation_flags() {
        let fit = fit_glm(&col(&[-1.0, 1.0]), &[0.0, 1.0], Family::Logistic, true).unwrap();
        assert!(!fit.converged);
        assert!(fit.separated);
        let p = fit.predict(&col(&[-1.0, 1.0])).unwrap();
        assert!(p[0] < 1e-6 && p[1] > 1.0 - 1e-6);
    }

    #[test]
    fn logistic_constant_outcome_caps() {
        let x = col(&[0.3, -1.2, 2.0, 0.7]);
        for c in [0.0, 1.0] {
            let fit = fit_glm(&x, &[c; 4], Family::Logistic, true).unwrap();
            assert!(!fit.converged);
            for p in fit.predict(&x).unwrap() {
                assert!((p - c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn poisson_intercept_only_is_log_mean() {
        let x = DesignMatrix::empty(3).unwrap();
        let fit = fit_glm(&x, &[1.0, 2.0, 3.0], Family::Poisson, true).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-9);
        assert!((fit.predict(&x).unwrap()[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn predict_glm_examples() {
        let zero = GlmFit {
            family: Family::Logistic,
            intercept: 0.0,
            slopes: vec![0.0],
            converged: true,
            separated: false,
            iterations: 0,
            max_abs_score: 0.0,
        };
        assert_eq!(zero.predict(&col(&[123.0])).unwrap(), vec![0.5]);

        let pois = GlmFit {
            family: Family::Poisson,
            intercept: 3f64.ln(),
            slopes: vec![],
            ..zero.clone()
        };
        assert!((pois.predict(&DesignMatrix::empty(1).unwrap()).unwrap()[0] - 3.0).abs() < 1e-12);

        let unit = GlmFit {
            slopes: vec![1.0],
            ..zero
        };
        let p = unit.predict(&col(&[-700.0, -40.0, -5.0, 0.0])).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn glm_rejects_bad_outcomes() {
        let x = col(&[1.0, 2.0]);
        assert!(matches!(
            fit_glm(&x, &[0.0, 0.5], Family::Logistic, true),
            Err(Error::InvalidOutcome { row: 1, .. })
        ));
        assert!(fit_glm(&x, &[-1.0, 2.0], Family::Poisson, true).is_err());
        assert!(fit_glm(&x, &[1.0], Family::Poisson, true).is_err());
    }
}

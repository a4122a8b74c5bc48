//! Exact algebra on multivariate normal distributions.
//!
//! A [`GaussianJoint`] carries a square-root factor `F` with
//! `covariance = F F^T` next to the covariance itself. Conditioning solves the
//! least-squares problem `F_g^T c ~ F_t^T`, which gives the same coefficients
//! and residual variance as the Schur complement of the covariance but at the
//! square root of its condition number. That matters here: a tremble of
//! `1e-8 var_theta` makes the `(theta, a)` block condition number about 1e8.
//! Singular blocks (pure strategies) fall back to the minimum-norm
//! pseudoinverse solution.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Eigenvalues of an equilibrated conditioning block below this fraction of
/// the largest one are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;
/// Condition number above which a conditioning step is flagged.
pub const SINGULAR_CONDITION_NUMBER: f64 = 1e12;
/// Tolerance for negative eigenvalues clipped to zero on construction.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    variables: Vec<String>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

/// Non-fatal flag attached to a conditional whose conditioning block was
/// (numerically) singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularConditioning {
    pub condition_number: f64,
}

/// `target = intercept + coefficients . given + noise`, noise ~ N(0, residual_variance).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearConditional {
    pub target: String,
    pub given: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    pub warning: Option<SingularConditioning>,
}

impl LinearConditional {
    /// A root factor: no parents, just a mean and variance.
    pub fn marginal(target: impl Into<String>, mean: f64, variance: f64) -> Self {
        LinearConditional {
            target: target.into(),
            given: Vec::new(),
            intercept: mean,
            coefficients: Vec::new(),
            residual_variance: variance.max(0.0),
            warning: None,
        }
    }

    pub fn new(
        target: impl Into<String>,
        given: Vec<String>,
        intercept: f64,
        coefficients: Vec<f64>,
        residual_variance: f64,
    ) -> Result<Self> {
        if given.len() != coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} conditioning variables but {} coefficients",
                given.len(),
                coefficients.len()
            )));
        }
        if !(residual_variance >= 0.0) {
            return Err(Error::invalid("residual_variance", "must be nonnegative"));
        }
        Ok(LinearConditional {
            target: target.into(),
            given,
            intercept,
            coefficients,
            residual_variance,
            warning: None,
        })
    }

    /// Coefficient on `name`, or `None` if it is not conditioned on.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.given
            .iter()
            .position(|g| g == name)
            .map(|i| self.coefficients[i])
    }

    /// Conditional mean at the given values (aligned with `given`).
    pub fn predict(&self, values: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(values)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

impl GaussianJoint {
    /// Builds a joint from a covariance matrix, symmetrizing it and clipping
    /// negative eigenvalues down to `-PSD_TOLERANCE` (relative to the largest
    /// variance) to zero.
    pub fn new(
        variables: Vec<String>,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let n = variables.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} variables, covariance {}x{}",
                n,
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        check_shape(&variables, &mean)?;
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance", "contains non-finite entries"));
        }
        let mut covariance = (&covariance + covariance.transpose()) * 0.5;
        let factor = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let scale = covariance.diagonal().amax().max(1.0);
            let eigen = SymmetricEigen::new(covariance.clone());
            let min = eigen.eigenvalues.min();
            if min < -PSD_TOLERANCE * scale {
                return Err(Error::NotPositiveSemidefinite(min));
            }
            let clipped = eigen.eigenvalues.map(|l| l.max(0.0));
            if min < 0.0 {
                covariance = &eigen.eigenvectors
                    * DMatrix::from_diagonal(&clipped)
                    * eigen.eigenvectors.transpose();
                covariance = (&covariance + covariance.transpose()) * 0.5;
            }
            &eigen.eigenvectors * DMatrix::from_diagonal(&clipped.map(f64::sqrt))
        };
        Ok(GaussianJoint {
            variables,
            mean,
            covariance,
            factor,
        })
    }

    /// Builds a joint from a square-root factor: `covariance = factor factor^T`.
    /// Rows are variables; columns are independent unit shocks.
    pub fn from_factor(
        variables: Vec<String>,
        mean: DVector<f64>,
        factor: DMatrix<f64>,
    ) -> Result<Self> {
        check_shape(&variables, &mean)?;
        if factor.nrows() != variables.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variables, factor with {} rows",
                variables.len(),
                factor.nrows()
            )));
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("factor", "contains non-finite entries"));
        }
        let covariance = &factor * factor.transpose();
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(GaussianJoint {
            variables,
            mean,
            covariance,
            factor,
        })
    }

    pub fn from_parts(variables: &[&str], mean: &[f64], covariance: &[f64]) -> Result<Self> {
        let n = variables.len();
        if covariance.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                n * n
            )));
        }
        GaussianJoint::new(
            variables.iter().map(|s| s.to_string()).collect(),
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, covariance),
        )
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Square-root factor of the covariance (rows are variables).
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn mean_of(&self, name: &str) -> Result<f64> {
        Ok(self.mean[self.index_of(name)?])
    }

    pub fn variance_of(&self, name: &str) -> Result<f64> {
        let i = self.index_of(name)?;
        Ok(self.covariance[(i, i)])
    }

    pub fn covariance_between(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.covariance[(self.index_of(a)?, self.index_of(b)?)])
    }

    /// Mean and variance of the linear combination `weights . variables`.
    pub fn linear_moments(&self, weights: &[(&str, f64)]) -> Result<(f64, f64)> {
        let mut w = DVector::zeros(self.dim());
        for &(name, c) in weights {
            w[self.index_of(name)?] += c;
        }
        let mean = w.dot(&self.mean);
        let var = (w.transpose() * &self.covariance * &w)[(0, 0)];
        Ok((mean, var.max(0.0)))
    }

    /// Affine conditional expectation of `target` given `given`, with the
    /// residual variance of the Schur complement.
    pub fn condition(&self, target: &str, given: &[&str]) -> Result<LinearConditional> {
        let t = self.index_of(target)?;
        let g: Vec<usize> = given
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<_>>()?;
        if g.contains(&t) {
            return Err(Error::invalid(
                target,
                "cannot condition a variable on itself",
            ));
        }
        for (i, gi) in g.iter().enumerate() {
            if g[..i].contains(gi) {
                return Err(Error::DuplicateNode(given[i].to_string()));
            }
        }
        if g.is_empty() {
            return Ok(LinearConditional::marginal(
                target,
                self.mean[t],
                self.covariance[(t, t)],
            ));
        }

        let shocks = self.factor.ncols();
        let design = DMatrix::from_fn(shocks, g.len(), |s, i| self.factor[(g[i], s)]);
        let response = DVector::from_fn(shocks, |s, _| self.factor[(t, s)]);
        let (coef, condition_number) = min_norm_least_squares(&design, &response);

        let residual_variance = (&response - &design * &coef).norm_squared();
        let intercept = self.mean[t]
            - g.iter()
                .zip(coef.iter())
                .map(|(&gi, c)| c * self.mean[gi])
                .sum::<f64>();
        let warning = (condition_number > SINGULAR_CONDITION_NUMBER)
            .then_some(SingularConditioning { condition_number });

        Ok(LinearConditional {
            target: target.to_string(),
            given: given.iter().map(|s| s.to_string()).collect(),
            intercept,
            coefficients: coef.iter().copied().collect(),
            residual_variance,
            warning,
        })
    }

    /// Sub-joint over `keep`, in the order given.
    pub fn marginalize(&self, keep: &[&str]) -> Result<GaussianJoint> {
        if keep.is_empty() {
            return Err(Error::invalid("keep", "must name at least one variable"));
        }
        let idx: Vec<usize> = keep
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<_>>()?;
        for (i, gi) in idx.iter().enumerate() {
            if idx[..i].contains(gi) {
                return Err(Error::DuplicateNode(keep[i].to_string()));
            }
        }
        let k = idx.len();
        Ok(GaussianJoint {
            variables: keep.iter().map(|s| s.to_string()).collect(),
            mean: DVector::from_fn(k, |i, _| self.mean[idx[i]]),
            covariance: DMatrix::from_fn(k, k, |i, j| self.covariance[(idx[i], idx[j])]),
            factor: DMatrix::from_fn(k, self.factor.ncols(), |i, s| self.factor[(idx[i], s)]),
        })
    }
}

fn check_shape(variables: &[String], mean: &DVector<f64>) -> Result<()> {
    if mean.len() != variables.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} variables, mean of length {}",
            variables.len(),
            mean.len()
        )));
    }
    for (i, v) in variables.iter().enumerate() {
        if variables[..i].contains(v) {
            return Err(Error::DuplicateNode(v.clone()));
        }
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mean", "contains non-finite entries"));
    }
    Ok(())
}

/// Minimum-norm least-squares solution of `design c ~ response`, plus the
/// condition number of `design^T design` after scaling its columns to unit
/// norm (infinite when singular).
///
/// Rank and conditioning are judged from an SVD. A well-conditioned system
/// is then solved through its normal equations in double-double arithmetic:
/// a tremble of variance `t` makes the design graded with a row of size
/// `sqrt(t)`, and any f64 solver loses about `eps / t` in the coefficients
/// while the exact solution of the rounded data does not.
fn min_norm_least_squares(design: &DMatrix<f64>, response: &DVector<f64>) -> (DVector<f64>, f64) {
    let k = design.ncols();
    // Zero-variance regressors keep scale 1 so the cutoff drops them.
    let d = DVector::from_fn(k, |i, _| {
        let norm = design.column(i).norm();
        if norm > 0.0 {
            1.0 / norm
        } else {
            1.0
        }
    });
    let scaled = design * DMatrix::from_diagonal(&d);
    let svd = SVD::new(scaled, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = &svd.singular_values;
    let max = sv.max();
    if max <= 0.0 {
        return (DVector::zeros(k), f64::INFINITY);
    }
    let min = if sv.len() < k { 0.0 } else { sv.min() };
    let condition_number = if min > 0.0 {
        (max / min).powi(2)
    } else {
        f64::INFINITY
    };

    if condition_number <= SINGULAR_CONDITION_NUMBER {
        if let Some(c) = normal_equations_extended(design, response) {
            return (c, condition_number);
        }
    }

    let cutoff = max * PINV_RCOND.sqrt();
    let proj = u.transpose() * response;
    let inv = DVector::from_fn(
        sv.len(),
        |i, _| if sv[i] > cutoff { proj[i] / sv[i] } else { 0.0 },
    );
    let z = v_t.transpose() * inv;
    (z.component_mul(&d), condition_number)
}

/// Solves `(A^T A) c = A^T b` by Gaussian elimination with partial pivoting
/// in double-double arithmetic.
fn normal_equations_extended(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (m, k) = design.shape();
    let zero = TwoFloat::from(0.0);
    let dot = |u: &dyn Fn(usize) -> f64, v: &dyn Fn(usize) -> f64| {
        (0..m).fold(zero, |acc, s| acc + TwoFloat::new_mul(u(s), v(s)))
    };
    let mut aug = vec![vec![zero; k + 1]; k];
    for i in 0..k {
        for j in i..k {
            let g = dot(&|s| design[(s, i)], &|s| design[(s, j)]);
            aug[i][j] = g;
            aug[j][i] = g;
        }
        aug[i][k] = dot(&|s| design[(s, i)], &|s| response[s]);
    }
    for col in 0..k {
        let pivot =
            (col..k).max_by(|&p, &q| aug[p][col].hi().abs().total_cmp(&aug[q][col].hi().abs()))?;
        if aug[pivot][col].hi() == 0.0 {
            return None;
        }
        aug.swap(col, pivot);
        for row in col + 1..k {
            let factor = dd_div(aug[row][col], aug[col][col]);
            for j in col..=k {
                let delta = factor * aug[col][j];
                aug[row][j] -= delta;
            }
        }
    }
    let mut solution = vec![zero; k];
    for row in (0..k).rev() {
        let mut acc = aug[row][k];
        for j in row + 1..k {
            acc -= aug[row][j] * solution[j];
        }
        solution[row] = dd_div(acc, aug[row][row]);
    }
    let out = DVector::from_fn(k, |i, _| solution[i].hi() + solution[i].lo());
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Double-double quotient with one correction step; the crate's own
/// division is only f64-accurate.
fn dd_div(num: TwoFloat, den: TwoFloat) -> TwoFloat {
    let q = num.hi() / den.hi();
    let r = num - den * TwoFloat::from(q);
    TwoFloat::from(q) + TwoFloat::from(r.hi() / den.hi())
}

/// Weight on `eps + eta` in the best predictor of `eps`:
/// `var_eps / (var_eps + var_eta)`.
pub fn signal_extraction_weight(var_eps: f64, var_eta: f64) -> Result<f64> {
    if !(var_eps >= 0.0) {
        return Err(Error::invalid("var_eps", "must be nonnegative"));
    }
    if !(var_eta >= 0.0) {
        return Err(Error::invalid("var_eta", "must be nonnegative"));
    }
    if var_eps == 0.0 && var_eta == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    Ok(var_eps / (var_eps + var_eta))
}

//! Wald-type tests of `H0: C * Ybar = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastMatrix, EffectKind};
use crate::data::ExperimentData;
use crate::distributions::{chi2_quantile, chi2_sf};
use crate::error::{Error, Result};
use crate::estimation::{contrast_for, covariance_hat, mean_vector, CovarianceEstimate, MeanVector};

/// Largest acceptable ratio of extreme eigenvalues of `C D C'`.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_upper: f64,
    pub alpha: f64,
    pub critical: f64,
    pub reject: bool,
}

fn condition_number(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if max <= 0.0 || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `T = J (C Y_hat)' (C D_hat C')^{-1} (C Y_hat)`.
///
/// When `C D_hat C'` is singular but `C Y_hat` vanishes to rounding error the
/// statistic is reported as 0.
pub fn wald_statistic(
    yhat: &MeanVector,
    dhat: &CovarianceEstimate,
    c: &ContrastMatrix,
    j: usize,
) -> Result<f64> {
    let cm = c.matrix();
    if cm.ncols() != yhat.values.len() || dhat.matrix.nrows() != yhat.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "contrast has {} columns, mean vector {} entries, covariance {} rows",
            cm.ncols(),
            yhat.values.len(),
            dhat.matrix.nrows()
        )));
    }
    let v: DVector<f64> = cm * &yhat.values;
    let mut s: DMatrix<f64> = cm * &dhat.matrix * cm.transpose();
    s = (&s + s.transpose()) * 0.5;
    let condition = condition_number(&s);
    if !(condition <= CONDITION_LIMIT) {
        let scale = yhat.values.amax().max(f64::MIN_POSITIVE) * cm.amax() * cm.ncols() as f64;
        if v.amax() <= 64.0 * f64::EPSILON * scale {
            return Ok(0.0);
        }
        return Err(Error::SingularCovariance { condition });
    }
    let chol = s.cholesky().ok_or(Error::SingularCovariance { condition })?;
    let w = chol.solve(&v);
    Ok((j as f64 * v.dot(&w)).max(0.0))
}

/// Compares `T` against the `1 - alpha` quantile of a central chi-square with `k` degrees of freedom.
pub fn chi_square_test(statistic: f64, k: usize, alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadProbability { name: "alpha", value: alpha });
    }
    if k == 0 {
        return Err(Error::InvalidParameter("zero degrees of freedom".into()));
    }
    if !(statistic >= 0.0) {
        return Err(Error::InvalidParameter(format!("test statistic {statistic}")));
    }
    let critical = chi2_quantile(1.0 - alpha, k as f64)?;
    let p_upper = if statistic == 0.0 { 1.0 } else { chi2_sf(statistic, k as f64) };
    Ok(TestResult {
        statistic,
        dof: k,
        p_upper,
        alpha,
        critical,
        reject: statistic > critical,
    })
}

/// Wald test for an arbitrary full-rank contrast.
pub fn test_contrast(data: &ExperimentData, c: &ContrastMatrix, alpha: f64) -> Result<TestResult> {
    let yhat = mean_vector(data)?;
    let dhat = covariance_hat(data)?;
    let t = wald_statistic(&yhat, &dhat, c, data.num_clusters())?;
    chi_square_test(t, c.rank(), alpha)
}

/// Wald test of no direct, marginal direct or spillover effect.
pub fn test_effect(data: &ExperimentData, kind: EffectKind, alpha: f64) -> Result<TestResult> {
    let c = contrast_for(data, kind)?;
    test_contrast(data, &c, alpha)
}

/// Standard errors `sqrt(diag(C D C') / J)` of the contrast estimates.
pub fn standard_errors(c: &ContrastMatrix, d: &CovarianceEstimate, j: usize) -> Vec<f64> {
    let cm = c.matrix();
    let s = cm * &d.matrix * cm.transpose();
    (0..s.nrows()).map(|i| (s[(i, i)].max(0.0) / j as f64).sqrt()).collect()
}

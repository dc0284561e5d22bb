//! Weighted least squares on the saturated `(z, a)` indicator model with a
//! cluster-robust HC2 covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ExperimentData;
use crate::design::slot;
use crate::error::{Error, Result};
use crate::estimation::{covariance_hat, mean_vector};

/// Unit weights for the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightScheme {
    /// `w_ij = 1 / (J_{A_j} * n_{j Z_ij})`.
    #[default]
    InverseProbability,
    /// `w_ij = 1` (ordinary least squares).
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    /// Per-cluster residuals, in the unit order of the data.
    pub residuals: Vec<Vec<f64>>,
    /// Per-cluster unit weights.
    pub weights: Vec<Vec<f64>>,
    /// `(X'WX)^{-1}`.
    pub bread: DMatrix<f64>,
    pub scheme: WeightScheme,
}

fn unit_weights(data: &ExperimentData, scheme: WeightScheme) -> Vec<Vec<f64>> {
    let counts = data.cluster_counts();
    data.clusters()
        .iter()
        .map(|c| {
            let n1 = c.arm_size(true) as f64;
            let n0 = c.arm_size(false) as f64;
            let ja = counts[c.mechanism] as f64;
            c.treated
                .iter()
                .map(|&t| match scheme {
                    WeightScheme::InverseProbability => 1.0 / (ja * if t { n1 } else { n0 }),
                    WeightScheme::Unit => 1.0,
                })
                .collect()
        })
        .collect()
}

fn design_rows(data: &ExperimentData, k: usize) -> Vec<DMatrix<f64>> {
    data.clusters()
        .iter()
        .map(|c| {
            let mut x = DMatrix::zeros(c.len(), k);
            for (i, &t) in c.treated.iter().enumerate() {
                x[(i, slot(t, c.mechanism))] = 1.0;
            }
            x
        })
        .collect()
}

/// Fits the saturated model `Y = sum_{z,a} beta_{za} 1(Z = z, A = a) + e`.
pub fn wls_fit_with(data: &ExperimentData, scheme: WeightScheme) -> Result<WlsFit> {
    let m = data.num_mechanisms();
    let k = 2 * m;
    let mut seen = vec![false; k];
    for c in data.clusters() {
        for &t in &c.treated {
            seen[slot(t, c.mechanism)] = true;
        }
    }
    if let Some(s) = seen.iter().position(|&x| !x) {
        return Err(Error::EmptyCell {
            z: if s % 2 == 0 { 1 } else { 0 },
            mechanism: s / 2,
        });
    }
    let weights = unit_weights(data, scheme);
    let xs = design_rows(data, k);
    let mut xtwx = DMatrix::zeros(k, k);
    let mut xtwy = DVector::zeros(k);
    for ((x, w), c) in xs.iter().zip(&weights).zip(data.clusters()) {
        let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
        let xtw = x.transpose() * wd;
        xtwx += &xtw * x;
        xtwy += &xtw * DVector::from_column_slice(&c.outcomes);
    }
    if scheme == WeightScheme::InverseProbability {
        let dev = (&xtwx - DMatrix::identity(k, k)).amax();
        if dev > 1e-12 {
            return Err(Error::Internal(format!("X'WX differs from the identity by {dev:e}")));
        }
    }
    let bread = xtwx.clone().cholesky().ok_or(Error::NotSpd)?.inverse();
    let coefficients = &bread * xtwy;
    let residuals = data
        .clusters()
        .iter()
        .map(|c| {
            c.treated
                .iter()
                .zip(&c.outcomes)
                .map(|(&t, &y)| y - coefficients[slot(t, c.mechanism)])
                .collect()
        })
        .collect();
    Ok(WlsFit {
        coefficients,
        residuals,
        weights,
        bread,
        scheme,
    })
}

/// Inverse-probability-weighted fit; its coefficients equal the estimated mean vector.
pub fn wls_fit(data: &ExperimentData) -> Result<WlsFit> {
    wls_fit_with(data, WeightScheme::InverseProbability)
}

/// Cluster-robust HC2 sandwich `B (sum_j X_j' W_j^{1/2} (I - P_j)^{-1/2} W_j^{1/2} e_j e_j' ...) B`.
///
/// Within a cluster, `I - P_j` has eigenvalue `1 - b_s * sum_{arm s} w` along
/// the square-root-weighted indicator of each arm `s` and eigenvalue 1 on the
/// orthogonal complement, so its inverse square root is applied in closed form.
pub fn hc2_cluster_cov(data: &ExperimentData, fit: &WlsFit) -> Result<DMatrix<f64>> {
    let k = fit.coefficients.len();
    let counts = data.cluster_counts();
    if let Some((a, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::DegenerateMechanism { mechanism: a, clusters: c });
    }
    let mut meat = DMatrix::zeros(k, k);
    for ((c, w), e) in data.clusters().iter().zip(&fit.weights).zip(&fit.residuals) {
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        // y = W^{1/2} e
        let mut y: Vec<f64> = sw.iter().zip(e).map(|(s, r)| s * r).collect();
        let mut adjust = Vec::with_capacity(2);
        for arm in [true, false] {
            let s = slot(arm, c.mechanism);
            let idx: Vec<usize> = (0..c.len()).filter(|&i| c.treated[i] == arm).collect();
            let norm2: f64 = idx.iter().map(|&i| w[i]).sum();
            let eigen = 1.0 - fit.bread[(s, s)] * norm2;
            if !(eigen > 0.0) {
                return Err(Error::DegenerateMechanism {
                    mechanism: c.mechanism,
                    clusters: counts[c.mechanism],
                });
            }
            let proj: f64 = idx.iter().map(|&i| sw[i] * y[i]).sum::<f64>() / norm2;
            adjust.push((idx, proj * (1.0 / eigen.sqrt() - 1.0)));
        }
        for (idx, f) in adjust {
            for i in idx {
                y[i] += f * sw[i];
            }
        }
        // u = X_j' W^{1/2} y
        let mut u = DVector::<f64>::zeros(k);
        for (i, &t) in c.treated.iter().enumerate() {
            u[slot(t, c.mechanism)] += sw[i] * y[i];
        }
        meat += &u * u.transpose();
    }
    Ok(&fit.bread * meat * &fit.bread)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_coefficient_gap: f64,
    pub max_covariance_gap: f64,
    pub pass: bool,
}

/// Compares the regression fit against the design-based estimates.
pub fn verify_equivalence_with(data: &ExperimentData, scheme: WeightScheme, tol: f64) -> Result<EquivalenceReport> {
    let fit = wls_fit_with(data, scheme)?;
    let cov = hc2_cluster_cov(data, &fit)?;
    let yhat = mean_vector(data)?;
    let dhat = covariance_hat(data)?;
    let j = data.num_clusters() as f64;
    let max_coefficient_gap = (&fit.coefficients - &yhat.values).amax();
    let max_covariance_gap = (cov - dhat.matrix / j).amax();
    Ok(EquivalenceReport {
        max_coefficient_gap,
        max_covariance_gap,
        pass: max_coefficient_gap <= tol && max_covariance_gap <= tol,
    })
}

pub fn verify_equivalence(data: &ExperimentData, tol: f64) -> Result<EquivalenceReport> {
    verify_equivalence_with(data, WeightScheme::InverseProbability, tol)
}

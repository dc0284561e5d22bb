//! Unbiased point estimates and randomization-based covariance.
//!
//! `D` denotes `J` times the covariance matrix of the estimated mean vector.
//! [`covariance_hat`] is its conservative block-diagonal estimator and
//! [`true_covariance`] evaluates it exactly from a full table of potential
//! outcomes (only possible in simulation).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastMatrix, EffectKind};
use crate::data::ExperimentData;
use crate::design::{slot, DesignSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanKind {
    Estimated,
    True,
}

/// Length-`2m` vector of `(z, a)` means in the interleaved layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    pub values: DVector<f64>,
    pub kind: MeanKind,
}

impl MeanVector {
    pub fn get(&self, treated: bool, mechanism: usize) -> f64 {
        self.values[slot(treated, mechanism)]
    }

    pub fn num_mechanisms(&self) -> usize {
        self.values.len() / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Conservative,
    Oracle,
}

/// A `2m x 2m` matrix estimating (or equal to) `J * cov(Y_hat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub kind: CovarianceKind,
}

/// Per-cluster arm means and within-arm sample variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSummary {
    pub mechanism: usize,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub n_treated: usize,
    pub n_control: usize,
    /// `None` when the arm has a single unit.
    pub var_treated: Option<f64>,
    pub var_control: Option<f64>,
}

fn arm_moments(values: impl Iterator<Item = f64> + Clone) -> (usize, f64, Option<f64>) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), y| (n + 1, s + y));
    let mean = sum / n as f64;
    let var = (n >= 2).then(|| values.map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64);
    (n, mean, var)
}

pub fn summarize_clusters(data: &ExperimentData) -> Vec<ClusterSummary> {
    data.clusters()
        .iter()
        .map(|c| {
            let (n1, m1, v1) = arm_moments(c.arm(true));
            let (n0, m0, v0) = arm_moments(c.arm(false));
            ClusterSummary {
                mechanism: c.mechanism,
                mean_treated: m1,
                mean_control: m0,
                n_treated: n1,
                n_control: n0,
                var_treated: v1,
                var_control: v0,
            }
        })
        .collect()
}

fn require_all_mechanisms(data: &ExperimentData) -> Result<Vec<usize>> {
    let counts = data.cluster_counts();
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingMechanism { mechanism: a });
    }
    Ok(counts)
}

/// The estimated mean vector: per mechanism, the average over its clusters of
/// the within-cluster arm means.
pub fn mean_vector(data: &ExperimentData) -> Result<MeanVector> {
    let counts = require_all_mechanisms(data)?;
    let mut values = DVector::zeros(2 * data.num_mechanisms());
    for s in summarize_clusters(data) {
        values[slot(true, s.mechanism)] += s.mean_treated;
        values[slot(false, s.mechanism)] += s.mean_control;
    }
    for (a, &c) in counts.iter().enumerate() {
        values[slot(true, a)] /= c as f64;
        values[slot(false, a)] /= c as f64;
    }
    Ok(MeanVector {
        values,
        kind: MeanKind::Estimated,
    })
}

/// The standard contrast of `kind` for this data set; MDE weights are the observed `J_a / J`.
pub fn contrast_for(data: &ExperimentData, kind: EffectKind) -> Result<ContrastMatrix> {
    ContrastMatrix::build(kind, data.num_mechanisms(), &data.mechanism_shares())
}

/// `C * Y_hat` for the requested effect family.
pub fn point_estimates(data: &ExperimentData, kind: EffectKind) -> Result<DVector<f64>> {
    let yhat = mean_vector(data)?;
    let c = contrast_for(data, kind)?;
    Ok(c.matrix() * &yhat.values)
}

/// Conservative estimator of `D`: block-diagonal with block `a` equal to
/// `J / J_a` times the between-cluster sample covariance of the arm means.
pub fn covariance_hat(data: &ExperimentData) -> Result<CovarianceEstimate> {
    let counts = require_all_mechanisms(data)?;
    if let Some((a, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::DegenerateMechanism { mechanism: a, clusters: c });
    }
    let yhat = mean_vector(data)?;
    let m = data.num_mechanisms();
    let j = data.num_clusters() as f64;
    let mut d = DMatrix::zeros(2 * m, 2 * m);
    for s in summarize_clusters(data) {
        let (t, c) = (slot(true, s.mechanism), slot(false, s.mechanism));
        let dt = s.mean_treated - yhat.values[t];
        let dc = s.mean_control - yhat.values[c];
        d[(t, t)] += dt * dt;
        d[(c, c)] += dc * dc;
        d[(t, c)] += dt * dc;
    }
    for (a, &ja) in counts.iter().enumerate() {
        let scale = j / ja as f64 / (ja as f64 - 1.0);
        let (t, c) = (slot(true, a), slot(false, a));
        d[(t, t)] *= scale;
        d[(c, c)] *= scale;
        d[(t, c)] *= scale;
        d[(c, t)] = d[(t, c)];
    }
    Ok(CovarianceEstimate {
        matrix: d,
        kind: CovarianceKind::Conservative,
    })
}

/// Per-mechanism variance estimator for the direct effect of mechanism `a`
/// that combines between-cluster and within-cluster sample variances.
///
/// Unbiased when unit-level direct effects are constant within clusters.
pub fn variance_ade_hh(data: &ExperimentData, mechanism: usize) -> Result<f64> {
    let counts = require_all_mechanisms(data)?;
    let ja = *counts
        .get(mechanism)
        .ok_or_else(|| Error::OutOfRange(format!("mechanism {mechanism}")))?;
    if ja < 2 {
        return Err(Error::DegenerateMechanism { mechanism, clusters: ja });
    }
    let j = data.num_clusters() as f64;
    let jaf = ja as f64;
    let summaries: Vec<(usize, ClusterSummary)> = summarize_clusters(data)
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.mechanism == mechanism)
        .collect();

    let (m1, m0) = summaries
        .iter()
        .fold((0.0, 0.0), |(a, b), (_, s)| (a + s.mean_treated, b + s.mean_control));
    let (m1, m0) = (m1 / jaf, m0 / jaf);
    let (mut s11, mut s00, mut s10) = (0.0, 0.0, 0.0);
    let mut within = 0.0;
    for (k, s) in &summaries {
        let (d1, d0) = (s.mean_treated - m1, s.mean_control - m0);
        s11 += d1 * d1;
        s00 += d0 * d0;
        s10 += d1 * d0;
        match (s.var_treated, s.var_control) {
            (Some(v1), Some(v0)) => within += v1 / s.n_treated as f64 + v0 / s.n_control as f64,
            _ => {
                return Err(Error::TinyArm {
                    cluster: data.clusters()[*k].id.clone(),
                })
            }
        }
    }
    let between = (s11 + s00 - 2.0 * s10) / (jaf - 1.0);
    Ok(between * (1.0 - jaf / j) / jaf + within / (j * jaf))
}

/// Full table of potential outcomes `Y_ij(z, a)`: one `n_j x 2m` matrix per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    num_mechanisms: usize,
    clusters: Vec<DMatrix<f64>>,
}

impl PotentialOutcomeTable {
    pub fn new(num_mechanisms: usize, clusters: Vec<DMatrix<f64>>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::ShapeMismatch("table has no clusters".into()));
        }
        for (j, c) in clusters.iter().enumerate() {
            if c.ncols() != 2 * num_mechanisms {
                return Err(Error::ShapeMismatch(format!(
                    "cluster {j} has {} columns, expected {}",
                    c.ncols(),
                    2 * num_mechanisms
                )));
            }
            if c.nrows() == 0 {
                return Err(Error::ShapeMismatch(format!("cluster {j} is empty")));
            }
            if c.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidParameter(format!("cluster {j} has non-finite cells")));
            }
        }
        Ok(PotentialOutcomeTable {
            num_mechanisms,
            clusters,
        })
    }

    pub fn num_mechanisms(&self) -> usize {
        self.num_mechanisms
    }

    pub fn clusters(&self) -> &[DMatrix<f64>] {
        &self.clusters
    }

    pub fn clusters_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.clusters
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.nrows()).collect()
    }

    /// Cluster-level means `Ybar_j(z, a)`.
    pub fn cluster_means(&self, j: usize) -> DVector<f64> {
        let c = &self.clusters[j];
        c.row_mean().transpose()
    }

    /// Population means `Ybar(z, a)`, every cluster weighted equally.
    pub fn true_means(&self) -> MeanVector {
        let mut values = DVector::zeros(2 * self.num_mechanisms);
        for j in 0..self.clusters.len() {
            values += self.cluster_means(j);
        }
        values /= self.clusters.len() as f64;
        MeanVector {
            values,
            kind: MeanKind::True,
        }
    }

    /// True effects `C * Ybar` with MDE weights `q`.
    pub fn true_effects(&self, kind: EffectKind, q: &[f64]) -> Result<DVector<f64>> {
        let c = ContrastMatrix::build(kind, self.num_mechanisms, q)?;
        Ok(c.matrix() * self.true_means().values)
    }

    pub fn check_against(&self, spec: &DesignSpec) -> Result<()> {
        if spec.num_mechanisms() != self.num_mechanisms {
            return Err(Error::ShapeMismatch(format!(
                "table has {} mechanisms, design {}",
                self.num_mechanisms,
                spec.num_mechanisms()
            )));
        }
        if spec.cluster_sizes() != self.cluster_sizes().as_slice() {
            return Err(Error::ShapeMismatch("cluster sizes differ from the design".into()));
        }
        Ok(())
    }
}

/// Exact `D = J * cov(Y_hat)` over the two-stage randomization distribution.
pub fn true_covariance(table: &PotentialOutcomeTable, spec: &DesignSpec) -> Result<CovarianceEstimate> {
    table.check_against(spec)?;
    let m = table.num_mechanisms();
    let k = 2 * m;
    let jn = table.clusters().len();
    let j = jn as f64;
    let means: Vec<DVector<f64>> = (0..jn).map(|c| table.cluster_means(c)).collect();
    let grand = means.iter().fold(DVector::zeros(k), |acc, x| acc + x) / j;

    // between-cluster covariance of the cluster means, divisor J - 1
    let mut between = DMatrix::zeros(k, k);
    for mj in &means {
        let d = mj - &grand;
        between += &d * d.transpose();
    }
    between /= j - 1.0;

    // sum_j over within-cluster terms for each mechanism: variance parts for
    // z = 1 and z = 0 and the (1, 0) covariance part
    let mut within = vec![[0.0f64; 3]; m];
    for (c, y) in table.clusters().iter().enumerate() {
        let n = y.nrows();
        let nf = n as f64;
        if n < 2 {
            return Err(Error::ShapeMismatch(format!("cluster {c} has a single unit")));
        }
        for a in 0..m {
            let (t, ctl) = (slot(true, a), slot(false, a));
            let (mt, mc) = (means[c][t], means[c][ctl]);
            let (mut stt, mut scc, mut stc) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let (dt, dc) = (y[(i, t)] - mt, y[(i, ctl)] - mc);
                stt += dt * dt;
                scc += dc * dc;
                stc += dt * dc;
            }
            let (stt, scc, stc) = (stt / (nf - 1.0), scc / (nf - 1.0), stc / (nf - 1.0));
            let n1 = spec.treated(c, a) as f64;
            let n0 = spec.control(c, a) as f64;
            within[a][0] += (1.0 - n1 / nf) * stt / n1;
            within[a][1] += (1.0 - n0 / nf) * scc / n0;
            within[a][2] += stc / nf;
        }
    }

    let counts = spec.cluster_counts();
    let mut cov = DMatrix::zeros(k, k);
    for r in 0..k {
        for s in 0..k {
            let (ar, as_) = (r / 2, s / 2);
            cov[(r, s)] = if ar != as_ {
                -between[(r, s)] / j
            } else {
                let ja = counts[ar] as f64;
                let fpc = (1.0 - ja / j) / ja;
                let w = &within[ar];
                match (r % 2, s % 2) {
                    (0, 0) => fpc * between[(r, s)] + w[0] / (ja * j),
                    (1, 1) => fpc * between[(r, s)] + w[1] / (ja * j),
                    _ => fpc * between[(r, s)] - w[2] / (ja * j),
                }
            };
        }
    }
    Ok(CovarianceEstimate {
        matrix: cov * j,
        kind: CovarianceKind::Oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArmPolicy, ClusterData};

    pub(crate) fn cluster(id: &str, mechanism: usize, treated: &[f64], control: &[f64]) -> ClusterData {
        let mut t = vec![true; treated.len()];
        t.extend(vec![false; control.len()]);
        let mut y = treated.to_vec();
        y.extend_from_slice(control);
        ClusterData {
            id: id.into(),
            mechanism,
            treated: t,
            outcomes: y,
        }
    }

    fn hand_dataset() -> ExperimentData {
        let clusters = vec![
            cluster("1", 0, &[2.0], &[0.0, 1.0]),
            cluster("2", 1, &[1.0, 3.0], &[5.0]),
        ];
        ExperimentData::from_clusters(2, clusters, ArmPolicy::Reject).unwrap().0
    }

    #[test]
    fn hand_mean_vector() {
        let y = mean_vector(&hand_dataset()).unwrap();
        assert_eq!(y.values.as_slice(), &[2.0, 0.5, 2.0, 5.0]);
    }

    #[test]
    fn hand_point_estimates() {
        let d = hand_dataset();
        assert_eq!(point_estimates(&d, EffectKind::De).unwrap().as_slice(), &[1.5, -3.0]);
        assert_eq!(point_estimates(&d, EffectKind::Se).unwrap().as_slice(), &[0.0, -4.5]);
        // equal cluster counts, so MDE is the plain average of the two direct effects
        assert_eq!(point_estimates(&d, EffectKind::Mde).unwrap().as_slice(), &[-0.75]);
    }

    #[test]
    fn constant_outcomes() {
        let clusters = (0..6)
            .map(|j| cluster(&j.to_string(), j % 3, &[2.5, 2.5], &[2.5, 2.5, 2.5]))
            .collect();
        let d = ExperimentData::from_clusters(3, clusters, ArmPolicy::Reject).unwrap().0;
        let y = mean_vector(&d).unwrap();
        assert!(y.values.iter().all(|&v| v == 2.5));
        for kind in EffectKind::ALL {
            assert!(point_estimates(&d, kind).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(covariance_hat(&d).unwrap().matrix.iter().all(|&v| v == 0.0));
        for a in 0..3 {
            assert_eq!(variance_ade_hh(&d, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn duplicating_clusters_keeps_means() {
        let d = hand_dataset();
        let mut doubled = d.clusters().to_vec();
        for c in d.clusters() {
            let mut c = c.clone();
            c.id.push('b');
            doubled.push(c);
        }
        let d2 = ExperimentData::from_clusters(2, doubled, ArmPolicy::Reject).unwrap().0;
        assert_eq!(mean_vector(&d).unwrap().values, mean_vector(&d2).unwrap().values);
    }

    #[test]
    fn hand_covariance_block() {
        // cluster arm means (2, 0.5) and (4, 1.5) in a single mechanism
        let clusters = vec![
            cluster("a", 0, &[1.0, 3.0], &[0.5]),
            cluster("b", 0, &[4.0], &[1.0, 2.0]),
        ];
        let d = ExperimentData::from_clusters(1, clusters, ArmPolicy::Reject).unwrap().0;
        let dh = covariance_hat(&d).unwrap().matrix;
        assert_eq!(dh, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.5]));
    }

    #[test]
    fn degenerate_and_missing_mechanisms() {
        assert!(matches!(
            covariance_hat(&hand_dataset()),
            Err(Error::DegenerateMechanism { mechanism: 0, clusters: 1 })
        ));
        let clusters = vec![cluster("a", 0, &[1.0], &[0.0])];
        let d = ExperimentData::from_clusters(2, clusters, ArmPolicy::Reject).unwrap().0;
        assert_eq!(mean_vector(&d).unwrap_err(), Error::MissingMechanism { mechanism: 1 });
    }

    #[test]
    fn hh_requires_two_units_per_arm() {
        let clusters = vec![
            cluster("a", 0, &[1.0, 2.0], &[0.0]),
            cluster("b", 0, &[1.0, 3.0], &[0.0, 1.0]),
        ];
        let d = ExperimentData::from_clusters(1, clusters, ArmPolicy::Reject).unwrap().0;
        assert_eq!(variance_ade_hh(&d, 0).unwrap_err(), Error::TinyArm { cluster: "a".into() });
    }

    #[test]
    fn hh_hand_value() {
        // m = 2, J = 4, two clusters per mechanism; mechanism 0:
        // cluster means (2, 1) and (4, 1), within variances 2, 0.5 and 2, 0.5
        let clusters = vec![
            cluster("a", 0, &[1.0, 3.0], &[0.5, 1.5]),
            cluster("b", 0, &[3.0, 5.0], &[0.5, 1.5]),
            cluster("c", 1, &[0.0, 1.0], &[0.0, 1.0]),
            cluster("d", 1, &[0.0, 1.0], &[0.0, 1.0]),
        ];
        let d = ExperimentData::from_clusters(2, clusters, ArmPolicy::Reject).unwrap().0;
        // between: var(2,4) = 2, var(1,1) = 0, cov = 0 -> 2; (1/2)(1 - 1/2) * 2 = 0.5
        // within: 2 * (2/2 + 0.5/2) = 2.5; / (J * J_a) = 2.5 / 8
        let want = 0.5 + 2.5 / 8.0;
        assert!((variance_ade_hh(&d, 0).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn oracle_constant_table_is_zero() {
        let spec = DesignSpec::new(vec![2, 2], vec![3; 4], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let table = PotentialOutcomeTable::new(2, vec![DMatrix::from_element(3, 4, 1.25); 4]).unwrap();
        let d = true_covariance(&table, &spec).unwrap().matrix;
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_shape_mismatch() {
        let spec = DesignSpec::new(vec![2, 2], vec![3; 4], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let table = PotentialOutcomeTable::new(2, vec![DMatrix::from_element(4, 4, 1.0); 4]).unwrap();
        assert!(matches!(true_covariance(&table, &spec), Err(Error::ShapeMismatch(_))));
    }
}

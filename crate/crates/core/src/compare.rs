//! Variance of the difference-in-means ATE estimator under two-stage,
//! completely randomized and cluster randomized designs, without interference.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{draw_assignment, DesignSpec};
use crate::error::{Error, Result};
use crate::simulation::replicate_rng;

/// Potential outcomes `Y_ij(1), Y_ij(0)` for equal-size clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoInterferencePopulation {
    y1: Vec<Vec<f64>>,
    y0: Vec<Vec<f64>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl NoInterferencePopulation {
    pub fn new(y1: Vec<Vec<f64>>, y0: Vec<Vec<f64>>) -> Result<Self> {
        if y1.len() != y0.len() || y1.len() < 2 {
            return Err(Error::ShapeMismatch("need at least two clusters in both arms".into()));
        }
        let n = y1[0].len();
        if n < 2 {
            return Err(Error::ShapeMismatch("clusters need at least two units".into()));
        }
        if y1.iter().chain(&y0).any(|c| c.len() != n) {
            return Err(Error::UnequalClusters);
        }
        if y1.iter().chain(&y0).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite potential outcome".into()));
        }
        Ok(NoInterferencePopulation { y1, y0 })
    }

    pub fn num_clusters(&self) -> usize {
        self.y1.len()
    }

    pub fn cluster_size(&self) -> usize {
        self.y1[0].len()
    }

    fn arm(&self, z: bool) -> &[Vec<f64>] {
        if z {
            &self.y1
        } else {
            &self.y0
        }
    }

    fn effects(&self) -> Vec<Vec<f64>> {
        self.y1
            .iter()
            .zip(&self.y0)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect()
    }

    pub fn ate(&self) -> f64 {
        self.effects().iter().map(|e| mean(e)).sum::<f64>() / self.num_clusters() as f64
    }

    fn total_var(groups: &[Vec<f64>]) -> f64 {
        let n = groups.iter().map(Vec::len).sum::<usize>() as f64;
        let grand = groups.iter().flatten().sum::<f64>() / n;
        groups.iter().flatten().map(|v| (v - grand).powi(2)).sum::<f64>() / (n - 1.0)
    }

    fn within_var(groups: &[Vec<f64>]) -> f64 {
        let n = groups.iter().map(Vec::len).sum::<usize>() as f64;
        groups
            .iter()
            .map(|g| {
                let m = mean(g);
                g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / (n - 1.0)
    }

    fn between_var(groups: &[Vec<f64>]) -> f64 {
        let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
        let grand = mean(&means);
        means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0)
    }

    /// `eta^2(z)`: total variance of `Y_ij(z)`, divisor `nJ - 1`.
    pub fn eta2(&self, z: bool) -> f64 {
        Self::total_var(self.arm(z))
    }

    /// `eta^2_w(z)`: pooled within-cluster variance, divisor `nJ - 1`.
    pub fn eta2_w(&self, z: bool) -> f64 {
        Self::within_var(self.arm(z))
    }

    /// `eta^2_b(z)`: variance of cluster means, divisor `J - 1`.
    pub fn eta2_b(&self, z: bool) -> f64 {
        Self::between_var(self.arm(z))
    }

    pub fn tau2(&self) -> f64 {
        Self::total_var(&self.effects())
    }

    pub fn tau2_w(&self) -> f64 {
        Self::within_var(&self.effects())
    }

    pub fn tau2_b(&self) -> f64 {
        Self::between_var(&self.effects())
    }

    fn cluster_icc(values: &[f64], grand: f64) -> f64 {
        let n = values.len() as f64;
        let dev: Vec<f64> = values.iter().map(|v| v - grand).collect();
        let sum: f64 = dev.iter().sum();
        let sq: f64 = dev.iter().map(|d| d * d).sum();
        (sum * sum - sq) / ((n - 1.0) * sq)
    }

    /// `r_j(z)`: intracluster correlation of `Y_ij(z)` in cluster `j`.
    pub fn r_j(&self, j: usize, z: bool) -> f64 {
        let arm = self.arm(z);
        let grand = arm.iter().flatten().sum::<f64>() / (arm.len() * self.cluster_size()) as f64;
        Self::cluster_icc(&arm[j], grand)
    }

    /// `r'_j`: intracluster correlation of the unit effects in cluster `j`.
    pub fn r_prime_j(&self, j: usize) -> f64 {
        let e = self.effects();
        Self::cluster_icc(&e[j], self.ate())
    }

    /// Between-cluster share of the outcome variance, averaged over both arms.
    pub fn icc(&self) -> f64 {
        0.5 * (self.eta2_b(true) / self.eta2(true) + self.eta2_b(false) / self.eta2(false))
    }
}

/// Which randomization produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    TwoStage,
    Complete,
    Cluster,
}

/// Difference-in-means estimate of the ATE.
///
/// Two-stage: average over clusters of the within-cluster difference.
/// Complete: pooled treated mean minus pooled control mean.
/// Cluster: mean of treated cluster means minus mean of control cluster means.
pub fn ate_estimator(design: Design, outcomes: &[Vec<f64>], treated: &[Vec<bool>]) -> Result<f64> {
    if outcomes.len() != treated.len() || outcomes.iter().zip(treated).any(|(y, z)| y.len() != z.len()) {
        return Err(Error::ShapeMismatch("outcomes and assignment differ in shape".into()));
    }
    let arm_mean = |y: &[f64], z: &[bool], t: bool| -> Option<f64> {
        let (s, c) = y
            .iter()
            .zip(z)
            .filter(|(_, &zz)| zz == t)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        (c > 0).then(|| s / c as f64)
    };
    match design {
        Design::TwoStage => {
            let mut total = 0.0;
            for (j, (y, z)) in outcomes.iter().zip(treated).enumerate() {
                match (arm_mean(y, z, true), arm_mean(y, z, false)) {
                    (Some(a), Some(b)) => total += a - b,
                    _ => return Err(Error::EmptyArm { cluster: j.to_string() }),
                }
            }
            Ok(total / outcomes.len() as f64)
        }
        Design::Complete => {
            let flat_y: Vec<f64> = outcomes.iter().flatten().copied().collect();
            let flat_z: Vec<bool> = treated.iter().flatten().copied().collect();
            match (arm_mean(&flat_y, &flat_z, true), arm_mean(&flat_y, &flat_z, false)) {
                (Some(a), Some(b)) => Ok(a - b),
                _ => Err(Error::EmptyArm { cluster: "all".into() }),
            }
        }
        Design::Cluster => {
            let mut means = Vec::with_capacity(outcomes.len());
            let mut flags = Vec::with_capacity(outcomes.len());
            for (j, (y, z)) in outcomes.iter().zip(treated).enumerate() {
                if z.is_empty() || z.iter().any(|&t| t != z[0]) {
                    return Err(Error::BadCounts(format!("cluster {j} is not uniformly assigned")));
                }
                means.push(mean(y));
                flags.push(z[0]);
            }
            match (arm_mean(&means, &flags, true), arm_mean(&means, &flags, false)) {
                (Some(a), Some(b)) => Ok(a - b),
                _ => Err(Error::EmptyArm { cluster: "all".into() }),
            }
        }
    }
}

/// Exact finite-population variance, or the approximation that replaces
/// within and between variances by `(1 - r)` and `r` times the totals and
/// treats `nJ - 1`, `nJ` and `n(J - 1)` as equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Exact,
    Approximate { r: f64 },
}

impl VarianceMode {
    fn check(self) -> Result<()> {
        if let VarianceMode::Approximate { r } = self {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::OutOfRange(format!("r = {r}")));
            }
        }
        Ok(())
    }
}

fn check_population(pop: &NoInterferencePopulation, spec: &DesignSpec) -> Result<()> {
    if !spec.has_equal_sizes() {
        return Err(Error::UnequalClusters);
    }
    if spec.num_clusters() != pop.num_clusters() || spec.cluster_sizes()[0] != pop.cluster_size() {
        return Err(Error::ShapeMismatch("design does not match the population".into()));
    }
    Ok(())
}

/// Variance of the two-stage estimator.
pub fn var_two_stage(pop: &NoInterferencePopulation, spec: &DesignSpec, mode: VarianceMode) -> Result<f64> {
    check_population(pop, spec)?;
    mode.check()?;
    let j = pop.num_clusters() as f64;
    let n = pop.cluster_size() as f64;
    let counts = spec.cluster_counts();
    match mode {
        VarianceMode::Exact => {
            let mut s1 = 0.0;
            let mut s0 = 0.0;
            for (a, &ja) in counts.iter().enumerate() {
                s1 += ja as f64 / spec.treated(0, a) as f64;
                s0 += ja as f64 / spec.control(0, a) as f64;
            }
            let factor = (n * j - 1.0) / (j.powi(3) * (n - 1.0));
            Ok(factor * (s1 * pop.eta2_w(true) + s0 * pop.eta2_w(false) - j / n * pop.tau2_w()))
        }
        VarianceMode::Approximate { r } => {
            let p = spec.treated_fraction();
            let mut s1 = 0.0;
            let mut s0 = 0.0;
            for (a, &ja) in counts.iter().enumerate() {
                s1 += ja as f64 / (n * p[a]);
                s0 += ja as f64 / (n * (1.0 - p[a]));
            }
            Ok((1.0 - r) / (j * j) * (s1 * pop.eta2(true) + s0 * pop.eta2(false)) - (1.0 - r) / (n * j) * pop.tau2())
        }
    }
}

/// Variance under complete randomization of `total_treated` units.
pub fn var_complete(pop: &NoInterferencePopulation, total_treated: usize) -> Result<f64> {
    let total = pop.num_clusters() * pop.cluster_size();
    if total_treated == 0 || total_treated >= total {
        return Err(Error::BadCounts(format!("{total_treated} treated out of {total}")));
    }
    let n1 = total_treated as f64;
    let n0 = (total - total_treated) as f64;
    Ok(pop.eta2(true) / n1 + pop.eta2(false) / n0 - pop.tau2() / total as f64)
}

/// Variance under cluster randomization with `treated_clusters` treated clusters.
pub fn var_cluster(pop: &NoInterferencePopulation, treated_clusters: usize, mode: VarianceMode) -> Result<f64> {
    mode.check()?;
    let j = pop.num_clusters();
    if treated_clusters == 0 || treated_clusters >= j {
        return Err(Error::BadCounts(format!("{treated_clusters} treated clusters out of {j}")));
    }
    let (j1, j0, jf) = (treated_clusters as f64, (j - treated_clusters) as f64, j as f64);
    Ok(match mode {
        VarianceMode::Exact => pop.eta2_b(true) / j1 + pop.eta2_b(false) / j0 - pop.tau2_b() / jf,
        VarianceMode::Approximate { r } => r * (pop.eta2(true) / j1 + pop.eta2(false) / j0 - pop.tau2() / jf),
    })
}

/// Treated units and treated clusters that match the two-stage design.
pub fn matched_counts(spec: &DesignSpec) -> Result<(usize, usize)> {
    if !spec.has_equal_sizes() {
        return Err(Error::UnequalClusters);
    }
    let n = spec.cluster_sizes()[0];
    let units: usize = spec
        .cluster_counts()
        .iter()
        .enumerate()
        .map(|(a, &ja)| ja * spec.treated(0, a))
        .sum();
    if !units.is_multiple_of(n) {
        return Err(Error::BadCounts(format!(
            "{units} treated units do not fill whole clusters of size {n}"
        )));
    }
    Ok((units, units / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRatios {
    /// Two-stage over complete randomization.
    pub ratio_complete: f64,
    /// Two-stage over cluster randomization.
    pub ratio_cluster: f64,
    /// Set when `r = 0` makes the cluster ratio infinite.
    pub cluster_infinite: bool,
}

/// `(1 - r) sum q p sum q/p` and the same divided by `n r`.
pub fn efficiency_ratios(r: f64, n: usize, p: &[f64], q: &[f64]) -> Result<EfficiencyRatios> {
    if p.is_empty() || p.len() != q.len() {
        return Err(Error::ShapeMismatch("p and q differ in length".into()));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::OutOfRange(format!("r = {r}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("cluster size 0".into()));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || q.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::OutOfRange("p must lie in [0, 1] and q in (0, 1]".into()));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::OutOfRange(format!("mechanism shares sum to {total}")));
    }
    let qp: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
    let qinv: f64 = q.iter().zip(p).map(|(a, b)| a / b).sum();
    let ratio_complete = (1.0 - r) * qp * qinv;
    let cluster_infinite = r == 0.0;
    let ratio_cluster = if cluster_infinite {
        f64::INFINITY
    } else {
        ratio_complete / (n as f64 * r)
    };
    Ok(EfficiencyRatios {
        ratio_complete,
        ratio_cluster,
        cluster_infinite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignVariances {
    pub two_stage: f64,
    pub complete: f64,
    pub cluster: f64,
}

/// Exact (or approximate) variances for all three designs at matched treated counts.
pub fn analytic_variances(pop: &NoInterferencePopulation, spec: &DesignSpec, mode: VarianceMode) -> Result<DesignVariances> {
    let (units, clusters) = matched_counts(spec)?;
    Ok(DesignVariances {
        two_stage: var_two_stage(pop, spec, mode)?,
        complete: var_complete(pop, units)?,
        cluster: var_cluster(pop, clusters, mode)?,
    })
}

/// Randomization variances of the three estimators over `draws` draws of each design.
pub fn mc_variances(pop: &NoInterferencePopulation, spec: &DesignSpec, draws: usize, seed: u64) -> Result<DesignVariances> {
    check_population(pop, spec)?;
    if draws < 2 {
        return Err(Error::InvalidParameter("at least two draws are required".into()));
    }
    let (units, clusters) = matched_counts(spec)?;
    let j = pop.num_clusters();
    let n = pop.cluster_size();
    let observe = |z: &[Vec<bool>]| -> Vec<Vec<f64>> {
        z.iter()
            .enumerate()
            .map(|(c, zc)| {
                zc.iter()
                    .enumerate()
                    .map(|(i, &t)| if t { pop.y1[c][i] } else { pop.y0[c][i] })
                    .collect()
            })
            .collect()
    };
    let estimates: Vec<Result<[f64; 3]>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = replicate_rng(seed, d as u64);
            let two = draw_assignment(spec, &mut rng).treatments;
            let mut flat: Vec<bool> = (0..j * n).map(|k| k < units).collect();
            flat.shuffle(&mut rng);
            let complete: Vec<Vec<bool>> = flat.chunks(n).map(<[bool]>::to_vec).collect();
            let mut cl: Vec<bool> = (0..j).map(|k| k < clusters).collect();
            cl.shuffle(&mut rng);
            let cluster: Vec<Vec<bool>> = cl.iter().map(|&t| vec![t; n]).collect();
            Ok([
                ate_estimator(Design::TwoStage, &observe(&two), &two)?,
                ate_estimator(Design::Complete, &observe(&complete), &complete)?,
                ate_estimator(Design::Cluster, &observe(&cluster), &cluster)?,
            ])
        })
        .collect();
    let mut sum = [0.0; 3];
    let mut rows = Vec::with_capacity(draws);
    for e in estimates {
        let e = e?;
        for k in 0..3 {
            sum[k] += e[k];
        }
        rows.push(e);
    }
    let mean = sum.map(|s| s / draws as f64);
    let mut var = [0.0; 3];
    for e in &rows {
        for k in 0..3 {
            var[k] += (e[k] - mean[k]).powi(2);
        }
    }
    let var = var.map(|v| v / (draws as f64 - 1.0));
    Ok(DesignVariances {
        two_stage: var[0],
        complete: var[1],
        cluster: var[2],
    })
}

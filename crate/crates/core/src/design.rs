//! The two-stage randomization frame.
//!
//! Clusters are first split across `m` assignment mechanisms by complete
//! randomization (exactly `J_a` clusters get mechanism `a`), then units are
//! completely randomized within each cluster: a cluster of size `n_j` under
//! mechanism `a` gets exactly `n_j1(a)` treated units.
//!
//! Mechanisms are 0-based throughout the crate. Vectors indexed by
//! (treatment, mechanism) use the interleaved layout
//! `(Y(1,0), Y(0,0), Y(1,1), Y(0,1), ...)`; see [`slot`] and [`index_of`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 0-based position of `(treated, mechanism)` in a length-`2m` vector.
#[inline]
pub fn slot(treated: bool, mechanism: usize) -> usize {
    if treated {
        2 * mechanism
    } else {
        2 * mechanism + 1
    }
}

/// 1-based position of `(z, a)` for a 1-based mechanism label `a`:
/// `2a - 1` for `z = 1` and `2a` for `z = 0`.
pub fn index_of(z: u8, a: usize, m: usize) -> Result<usize> {
    if z > 1 {
        return Err(Error::OutOfRange(format!("treatment indicator {z} is not 0 or 1")));
    }
    if a == 0 || a > m {
        return Err(Error::OutOfRange(format!("mechanism {a} outside 1..={m}")));
    }
    Ok(if z == 1 { 2 * a - 1 } else { 2 * a })
}

/// Validated description of a two-stage design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    cluster_counts: Vec<usize>,
    cluster_sizes: Vec<usize>,
    treated_fraction: Vec<f64>,
    /// `treated_counts[j][a]`: treated units in cluster `j` if it draws mechanism `a`.
    treated_counts: Vec<Vec<usize>>,
    rounded: bool,
}

impl DesignSpec {
    /// Builds a design whose treated counts are `round(n_j * p_a)` (half-up).
    pub fn new(
        cluster_counts: Vec<usize>,
        cluster_sizes: Vec<usize>,
        treated_fraction: Vec<f64>,
    ) -> Result<Self> {
        check_frame(&cluster_counts, &cluster_sizes, &treated_fraction)?;
        let mut rounded = false;
        let treated_counts = cluster_sizes
            .iter()
            .map(|&n| {
                treated_fraction
                    .iter()
                    .map(|&p| {
                        let exact = n as f64 * p;
                        let r = (exact + 0.5 + 1e-9).floor();
                        if (exact - r).abs() > 1e-9 {
                            rounded = true;
                        }
                        r as usize
                    })
                    .collect()
            })
            .collect();
        let spec = DesignSpec {
            cluster_counts,
            cluster_sizes,
            treated_fraction,
            treated_counts,
            rounded,
        };
        spec.check_arms()?;
        Ok(spec)
    }

    /// Builds a design with explicit per-(cluster, mechanism) treated counts.
    pub fn with_treated_counts(
        cluster_counts: Vec<usize>,
        cluster_sizes: Vec<usize>,
        treated_fraction: Vec<f64>,
        treated_counts: Vec<Vec<usize>>,
    ) -> Result<Self> {
        check_frame(&cluster_counts, &cluster_sizes, &treated_fraction)?;
        if treated_counts.len() != cluster_sizes.len()
            || treated_counts.iter().any(|row| row.len() != cluster_counts.len())
        {
            return Err(Error::ShapeMismatch(format!(
                "treated counts must be {} x {}",
                cluster_sizes.len(),
                cluster_counts.len()
            )));
        }
        let spec = DesignSpec {
            cluster_counts,
            cluster_sizes,
            treated_fraction,
            treated_counts,
            rounded: false,
        };
        spec.check_arms()?;
        Ok(spec)
    }

    /// Equal-size design: `J_a = round(q_a * J)` clusters of size `n` each.
    pub fn balanced(j: usize, n: usize, p: &[f64], q: &[f64]) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::ShapeMismatch("p and q differ in length".into()));
        }
        let counts = cluster_counts_for(j, q)?;
        DesignSpec::new(counts, vec![n; j], p.to_vec())
    }

    fn check_arms(&self) -> Result<()> {
        for (j, row) in self.treated_counts.iter().enumerate() {
            let n = self.cluster_sizes[j];
            for &n1 in row {
                if n1 == 0 || n1 >= n {
                    return Err(Error::EmptyArm { cluster: j.to_string() });
                }
            }
        }
        Ok(())
    }

    pub fn num_mechanisms(&self) -> usize {
        self.cluster_counts.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn cluster_counts(&self) -> &[usize] {
        &self.cluster_counts
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn treated_fraction(&self) -> &[f64] {
        &self.treated_fraction
    }

    /// `q_a = J_a / J`.
    pub fn mechanism_shares(&self) -> Vec<f64> {
        let j = self.num_clusters() as f64;
        self.cluster_counts.iter().map(|&c| c as f64 / j).collect()
    }

    pub fn treated(&self, cluster: usize, mechanism: usize) -> usize {
        self.treated_counts[cluster][mechanism]
    }

    pub fn control(&self, cluster: usize, mechanism: usize) -> usize {
        self.cluster_sizes[cluster] - self.treated_counts[cluster][mechanism]
    }

    /// Whether any treated count differs from the exact `n_j * p_a`.
    pub fn was_rounded(&self) -> bool {
        self.rounded
    }

    pub fn has_equal_sizes(&self) -> bool {
        self.cluster_sizes.windows(2).all(|w| w[0] == w[1])
    }
}

fn check_frame(counts: &[usize], sizes: &[usize], p: &[f64]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::BadCounts("no mechanisms".into()));
    }
    if p.len() != counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} treated fractions for {} mechanisms",
            p.len(),
            counts.len()
        )));
    }
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        return Err(Error::BadCounts(format!("mechanism {a} has no clusters")));
    }
    let total: usize = counts.iter().sum();
    if total != sizes.len() {
        return Err(Error::BadCounts(format!(
            "cluster counts sum to {total} but {} cluster sizes were given",
            sizes.len()
        )));
    }
    if let Some(j) = sizes.iter().position(|&n| n < 2) {
        return Err(Error::BadCounts(format!("cluster {j} has fewer than 2 units")));
    }
    if let Some(&bad) = p.iter().find(|&&x| !(x.is_finite() && (0.0..=1.0).contains(&x))) {
        return Err(Error::OutOfRange(format!("treated fraction {bad}")));
    }
    Ok(())
}

/// Splits `j` clusters into `round(q_a * j)` per mechanism, requiring exact integrality.
pub fn cluster_counts_for(j: usize, q: &[f64]) -> Result<Vec<usize>> {
    let counts: Vec<usize> = q.iter().map(|&qa| (qa * j as f64).round() as usize).collect();
    let exact = q
        .iter()
        .zip(&counts)
        .all(|(&qa, &c)| (qa * j as f64 - c as f64).abs() < 1e-6);
    if !exact || counts.iter().sum::<usize>() != j {
        return Err(Error::BadCounts(format!("J = {j} cannot be split exactly by q = {q:?}")));
    }
    Ok(counts)
}

/// One draw of both randomization stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentRealization {
    pub mechanisms: Vec<usize>,
    /// `treatments[j][i]` is true when unit `i` of cluster `j` is treated.
    pub treatments: Vec<Vec<bool>>,
}

/// First stage: a uniformly random arrangement with exactly `J_a` clusters per mechanism.
pub fn draw_first_stage<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Vec<usize> {
    let mut mechanisms: Vec<usize> = spec
        .cluster_counts
        .iter()
        .enumerate()
        .flat_map(|(a, &c)| std::iter::repeat_n(a, c))
        .collect();
    mechanisms.shuffle(rng);
    mechanisms
}

/// Second stage: a uniformly random treated subset of size `n_j1(A_j)` in each cluster.
pub fn draw_second_stage<R: Rng + ?Sized>(
    spec: &DesignSpec,
    mechanisms: &[usize],
    rng: &mut R,
) -> Vec<Vec<bool>> {
    mechanisms
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let n = spec.cluster_sizes[j];
            let n1 = spec.treated(j, a);
            let mut z: Vec<bool> = (0..n).map(|i| i < n1).collect();
            z.shuffle(rng);
            z
        })
        .collect()
}

pub fn draw_assignment<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> AssignmentRealization {
    let mechanisms = draw_first_stage(spec, rng);
    let treatments = draw_second_stage(spec, &mechanisms, rng);
    AssignmentRealization { mechanisms, treatments }
}

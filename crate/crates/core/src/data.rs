use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit: cluster, 0-based mechanism, treatment and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cluster: String,
    pub mechanism: usize,
    pub treated: bool,
    pub outcome: f64,
}

/// What to do with clusters that lack a treated or a control unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ArmPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterData {
    pub id: String,
    pub mechanism: usize,
    pub treated: Vec<bool>,
    pub outcomes: Vec<f64>,
}

impl ClusterData {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn arm_size(&self, treated: bool) -> usize {
        self.treated.iter().filter(|&&t| t == treated).count()
    }

    /// Outcomes of one arm, in input order.
    pub fn arm(&self, treated: bool) -> impl Iterator<Item = f64> + Clone + '_ {
        self.treated
            .iter()
            .zip(&self.outcomes)
            .filter(move |(&t, _)| t == treated)
            .map(|(_, &y)| y)
    }
}

/// Observed data from one two-stage experiment, grouped by cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentData {
    num_mechanisms: usize,
    clusters: Vec<ClusterData>,
}

impl ExperimentData {
    /// Groups observations by cluster (first-appearance order).
    ///
    /// Returns the data and the ids of clusters dropped under [`ArmPolicy::Drop`].
    pub fn from_observations<I>(num_mechanisms: usize, observations: I, policy: ArmPolicy) -> Result<(Self, Vec<String>)>
    where
        I: IntoIterator<Item = Observation>,
    {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut clusters: Vec<ClusterData> = Vec::new();
        for obs in observations {
            if obs.mechanism >= num_mechanisms {
                return Err(Error::OutOfRange(format!(
                    "mechanism {} with only {num_mechanisms} mechanisms",
                    obs.mechanism
                )));
            }
            if !obs.outcome.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite outcome in cluster {}",
                    obs.cluster
                )));
            }
            let k = match index.get(&obs.cluster) {
                Some(&k) => k,
                None => {
                    index.insert(obs.cluster.clone(), clusters.len());
                    clusters.push(ClusterData {
                        id: obs.cluster.clone(),
                        mechanism: obs.mechanism,
                        treated: Vec::new(),
                        outcomes: Vec::new(),
                    });
                    clusters.len() - 1
                }
            };
            let c = &mut clusters[k];
            if c.mechanism != obs.mechanism {
                return Err(Error::BadCounts(format!(
                    "cluster {} appears under mechanisms {} and {}",
                    c.id, c.mechanism, obs.mechanism
                )));
            }
            c.treated.push(obs.treated);
            c.outcomes.push(obs.outcome);
        }
        Self::from_clusters(num_mechanisms, clusters, policy)
    }

    pub fn from_clusters(
        num_mechanisms: usize,
        clusters: Vec<ClusterData>,
        policy: ArmPolicy,
    ) -> Result<(Self, Vec<String>)> {
        let mut kept = Vec::with_capacity(clusters.len());
        let mut dropped = Vec::new();
        for c in clusters {
            if c.treated.len() != c.outcomes.len() {
                return Err(Error::ShapeMismatch(format!("cluster {}", c.id)));
            }
            if c.mechanism >= num_mechanisms {
                return Err(Error::OutOfRange(format!("mechanism {}", c.mechanism)));
            }
            let n1 = c.arm_size(true);
            if n1 == 0 || n1 == c.len() {
                match policy {
                    ArmPolicy::Reject => return Err(Error::EmptyArm { cluster: c.id }),
                    ArmPolicy::Drop => {
                        dropped.push(c.id);
                        continue;
                    }
                }
            }
            kept.push(c);
        }
        Ok((
            ExperimentData {
                num_mechanisms,
                clusters: kept,
            },
            dropped,
        ))
    }

    pub fn num_mechanisms(&self) -> usize {
        self.num_mechanisms
    }

    pub fn clusters(&self) -> &[ClusterData] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_units(&self) -> usize {
        self.clusters.iter().map(ClusterData::len).sum()
    }

    /// Observed `J_a`.
    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_mechanisms];
        for c in &self.clusters {
            counts[c.mechanism] += 1;
        }
        counts
    }

    /// Observed `q_a = J_a / J`.
    pub fn mechanism_shares(&self) -> Vec<f64> {
        let j = self.num_clusters() as f64;
        self.cluster_counts().into_iter().map(|c| c as f64 / j).collect()
    }

    /// Flattens back into unit records.
    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        self.clusters.iter().flat_map(|c| {
            c.treated.iter().zip(&c.outcomes).map(move |(&t, &y)| Observation {
                cluster: c.id.clone(),
                mechanism: c.mechanism,
                treated: t,
                outcome: y,
            })
        })
    }
}

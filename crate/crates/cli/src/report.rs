//! Structured, schema-versioned run report.

use serde::{Deserialize, Serialize};
use twostage_core::compare::{DesignVariances, EfficiencyRatios};
use twostage_core::{Attained, EffectKind, EquivalenceReport, PowerEstimate, TestResult};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub inputs: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Analysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_sizes: Option<Vec<SampleSizeEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<Vec<PowerEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(inputs: RunConfig) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            inputs,
            data: None,
            analysis: None,
            sample_sizes: None,
            sweep: None,
            power: None,
            comparison: None,
            warnings: Vec::new(),
        }
    }

    /// Adds a warning unless the same text is already present.
    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        if !self.warnings.contains(&message) {
            self.warnings.push(message);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub clusters: usize,
    pub units: usize,
    /// File labels in internal mechanism order.
    pub mechanism_labels: Vec<u64>,
    pub clusters_per_mechanism: Vec<usize>,
    pub dropped_clusters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    /// Cell means in the order `(1, a_1), (0, a_1), (1, a_2), ...`.
    pub cell_means: Vec<f64>,
    pub cell_labels: Vec<String>,
    /// Conservative estimate of `J` times the covariance of the cell means, by row.
    pub covariance: Vec<Vec<f64>>,
    pub confidence_level: f64,
    pub effects: Vec<EffectReport>,
    pub direct_effect_variances: Vec<DirectVariance>,
    pub regression_check: EquivalenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub effect: EffectKind,
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub test: TestResult,
}

/// Two variance estimates for the direct effect of one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectVariance {
    pub mechanism: u64,
    /// From the block-diagonal covariance estimate.
    pub variance_block: f64,
    /// Between-plus-within estimator; absent when an arm has fewer than two units.
    pub variance_between_within: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeEntry {
    pub effect: EffectKind,
    pub clusters_required: usize,
    pub clusters_raw: f64,
    pub dof: usize,
    pub noncentrality: f64,
    pub denominator: f64,
    pub attained: Attained,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub r: f64,
    pub j_de: usize,
    pub j_mde: usize,
    pub j_se: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    /// Clusters from the sample-size formula when `--clusters` was not given.
    pub formula_clusters: Option<usize>,
    #[serde(flatten)]
    pub estimate: PowerEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub clusters: usize,
    pub cluster_size: usize,
    pub population_icc: f64,
    pub population_ate: f64,
    pub treated_units: usize,
    pub treated_clusters: usize,
    pub exact: DesignVariances,
    pub approximate: DesignVariances,
    pub ratios: EfficiencyRatios,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<DesignVariances>,
}

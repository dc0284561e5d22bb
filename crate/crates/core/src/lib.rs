//! Design-based analysis and power calculations for two-stage randomized
//! experiments with interference within clusters.
//!
//! Clusters are randomized to one of `m` treatment assignment mechanisms and
//! units are then randomized within each cluster. The crate estimates direct,
//! marginal direct and spillover effects, their conservative covariance,
//! Wald tests, required numbers of clusters and simulated power, and compares
//! the design with complete and cluster randomization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod contrast;
pub mod data;
pub mod design;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod power;
pub mod qp;
pub mod regression;
pub mod simulation;

pub use compare::{
    analytic_variances, ate_estimator, efficiency_ratios, mc_variances, var_cluster, var_complete, var_two_stage,
    Design, DesignVariances, EfficiencyRatios, NoInterferencePopulation, VarianceMode,
};
pub use contrast::{ContrastKind, ContrastMatrix, EffectKind};
pub use data::{ArmPolicy, ClusterData, ExperimentData, Observation};
pub use design::{draw_assignment, draw_first_stage, draw_second_stage, index_of, slot, AssignmentRealization, DesignSpec};
pub use error::{Error, Result};
pub use estimation::{
    covariance_hat, mean_vector, point_estimates, true_covariance, variance_ade_hh, CovarianceEstimate,
    CovarianceKind, MeanKind, MeanVector, PotentialOutcomeTable,
};
pub use inference::{chi_square_test, test_effect, wald_statistic, TestResult};
pub use power::{
    d0_block, noncentrality, sample_size, sample_size_de, sample_size_general, sample_size_mde, sample_size_se,
    Attained, PowerConfig, SampleSizeResult,
};
pub use qp::min_quadratic_on_s;
pub use regression::{hc2_cluster_cov, verify_equivalence, wls_fit, EquivalenceReport, WeightScheme, WlsFit};
pub use simulation::{
    estimate_power, generate_potential_outcomes, generate_theta, realize_data, DgpConfig, PowerEstimate,
    PowerSimConfig, ThetaScheme,
};

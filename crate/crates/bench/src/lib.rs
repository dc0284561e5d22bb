//! Fixtures shared by the benchmarks.

use twostage_core::simulation::replicate_rng;
use twostage_core::{
    generate_potential_outcomes, realize_data, DesignSpec, DgpConfig, ExperimentData, PowerConfig, PowerSimConfig,
    ThetaScheme,
};

/// One realized experiment with three mechanisms, `j` clusters of size `n`.
pub fn experiment(j: usize, n: usize, seed: u64) -> ExperimentData {
    let spec = DesignSpec::balanced(j, n, &[0.25, 0.5, 0.75], &[1.0 / 3.0; 3]).expect("valid design");
    let dgp = DgpConfig::from_total(vec![0.5, 0.0, 0.6, 0.1, 0.7, 0.2], 1.0, 0.2, 0.3, spec.clone());
    let mut rng = replicate_rng(seed, 0);
    let table = generate_potential_outcomes(&dgp, &mut rng).expect("valid population");
    realize_data(&table, &spec, &mut rng).expect("valid draw")
}

/// Sample-size settings of the job-search example with `m` mechanisms.
pub fn power_config(m: usize) -> PowerConfig {
    PowerConfig {
        p: (0..m).map(|a| (a as f64 + 1.0) / (m as f64 + 1.0)).collect(),
        q: vec![1.0 / m as f64; m],
        n: 100,
        sigma2: 0.167,
        r: 0.02,
        rho: None,
        mu: 0.03,
        alpha: 0.05,
        beta: 0.2,
        allow_weak_conservative: false,
    }
}

pub fn sim_config() -> PowerSimConfig {
    PowerSimConfig {
        p: vec![0.25, 0.5, 0.75],
        q: vec![1.0 / 3.0; 3],
        n: 20,
        sigma2: 1.0,
        r: 0.2,
        rho: 0.3,
        mu: 0.5,
        alpha: 0.05,
        scheme: ThetaScheme::DeAlt,
        redraw_theta: false,
        fixed_population: false,
        unequal_sizes: false,
    }
}

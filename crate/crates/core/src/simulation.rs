//! Normal data-generating process for potential outcomes and Monte Carlo power.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::EffectKind;
use crate::data::{ArmPolicy, ClusterData, ExperimentData};
use crate::design::{cluster_counts_for, draw_assignment, slot, DesignSpec};
use crate::error::{Error, Result};
use crate::estimation::PotentialOutcomeTable;
use crate::inference::test_effect;

/// How the `(z, a)` super-population means are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaScheme {
    /// Interleaved `(theta_{1,0}, theta_{0,0}, theta_{1,1}, ...)`.
    Explicit(Vec<f64>),
    /// Largest direct effect equal to `mu`, attained by the last mechanism.
    DeAlt,
    /// Marginal direct effect equal to `mu`.
    MdeAlt,
    /// Largest spillover effect equal to `mu`.
    SeAlt,
}

impl ThetaScheme {
    pub fn for_effect(kind: EffectKind) -> Self {
        match kind {
            EffectKind::De => ThetaScheme::DeAlt,
            EffectKind::Mde => ThetaScheme::MdeAlt,
            EffectKind::Se => ThetaScheme::SeAlt,
        }
    }

    /// Zero effects everywhere.
    pub fn null(m: usize) -> Self {
        ThetaScheme::Explicit(vec![0.0; 2 * m])
    }
}

/// Draws `theta` in the interleaved layout. `q` weights the marginal effect.
///
/// The uniform ranges are `mu / 0.5` times those of the reference scheme for
/// three mechanisms; other `m` use the same construction, with the MDE
/// effects spread linearly and rescaled so that the `q`-weighted mean is `mu`.
pub fn generate_theta<R: Rng + ?Sized>(scheme: &ThetaScheme, m: usize, mu: f64, q: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidParameter("no mechanisms".into()));
    }
    let s = mu / 0.5;
    let mut theta = vec![0.0; 2 * m];
    let uniform = |lo: f64, hi: f64, rng: &mut R| -> f64 {
        if hi > lo {
            Uniform::new(lo, hi).expect("finite range").sample(rng)
        } else {
            lo
        }
    };
    match scheme {
        ThetaScheme::Explicit(t) => {
            if t.len() != 2 * m {
                return Err(Error::ShapeMismatch(format!("{} theta values for {m} mechanisms", t.len())));
            }
            theta.copy_from_slice(t);
        }
        ThetaScheme::DeAlt => {
            for a in 0..m {
                theta[slot(false, a)] = uniform(-0.5 * s, 0.5 * s, rng);
            }
            for a in 0..m {
                let t0 = theta[slot(false, a)];
                theta[slot(true, a)] = if a + 1 == m {
                    t0 + 0.5 * s
                } else {
                    uniform(t0 - 0.5 * s, t0 + 0.5 * s, rng)
                };
            }
        }
        ThetaScheme::MdeAlt => {
            if q.len() != m {
                return Err(Error::ShapeMismatch("q must have one entry per mechanism".into()));
            }
            let mut effects: Vec<f64> = if m == 3 {
                vec![0.25 * s, 0.75 * s, 0.5 * s]
            } else if m == 1 {
                vec![0.5 * s]
            } else {
                (0..m).map(|a| s * (0.25 + 0.5 * a as f64 / (m - 1) as f64)).collect()
            };
            let weighted: f64 = effects.iter().zip(q).map(|(e, w)| e * w).sum();
            if weighted != 0.0 {
                for e in &mut effects {
                    *e *= mu / weighted;
                }
            }
            for a in 0..m {
                let t0 = uniform(-0.5 * s, 0.5 * s, rng);
                theta[slot(false, a)] = t0;
                theta[slot(true, a)] = t0 + effects[a];
            }
        }
        ThetaScheme::SeAlt => {
            if m < 2 {
                return Err(Error::BadKind("spillover scheme needs two mechanisms".into()));
            }
            for a in 0..m {
                theta[slot(false, a)] = uniform(-0.25 * s, 0.25 * s, rng);
            }
            for a in 0..m - 1 {
                theta[slot(true, a)] = uniform(-0.25 * s, 0.25 * s, rng);
            }
            let low = (0..m - 1).map(|a| theta[slot(true, a)]).fold(f64::INFINITY, f64::min);
            theta[slot(true, m - 1)] = 0.5 * s + low;
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub theta: Vec<f64>,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub rho: f64,
    pub spec: DesignSpec,
    pub center: bool,
}

impl DgpConfig {
    /// Splits a total variance into between (`r * sigma2`) and within parts.
    pub fn from_total(theta: Vec<f64>, sigma2: f64, r: f64, rho: f64, spec: DesignSpec) -> Self {
        DgpConfig {
            theta,
            sigma_b2: r * sigma2,
            sigma_w2: (1.0 - r) * sigma2,
            rho,
            spec,
            center: true,
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma_b2 + self.sigma_w2
    }

    /// Intracluster correlation `sigma_b2 / (sigma_b2 + sigma_w2)`.
    pub fn icc(&self) -> f64 {
        self.sigma_b2 / self.sigma2()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.spec.num_mechanisms();
        if self.theta.len() != 2 * m {
            return Err(Error::ShapeMismatch(format!("{} theta values for {m} mechanisms", self.theta.len())));
        }
        if !(self.sigma_b2 >= 0.0 && self.sigma_w2 >= 0.0) {
            return Err(Error::InvalidParameter("variances must be nonnegative".into()));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::OutOfRange(format!("rho = {}", self.rho)));
        }
        Ok(())
    }
}

/// Correlated standard normal pair with correlation `rho`.
fn normal_pair<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let e0: f64 = StandardNormal.sample(rng);
    let e1: f64 = StandardNormal.sample(rng);
    (rho * e0 + (1.0 - rho * rho).sqrt() * e1, e0)
}

/// Draws a full table of potential outcomes.
///
/// Cluster means: `Ybar_j(0,a) ~ N(theta_0a, sb2)` and
/// `Ybar_j(1,a) ~ N(theta_1a + rho (Ybar_j(0,a) - theta_0a), (1 - rho^2) sb2)`.
/// Units are bivariate normal around the cluster means with variance `sw2`
/// and correlation `rho`. With `center`, each column is shifted so that its
/// cluster-weighted mean is exactly `theta`.
pub fn generate_potential_outcomes<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<PotentialOutcomeTable> {
    cfg.validate()?;
    let m = cfg.spec.num_mechanisms();
    let (sb, sw) = (cfg.sigma_b2.sqrt(), cfg.sigma_w2.sqrt());
    let mut clusters: Vec<DMatrix<f64>> = cfg
        .spec
        .cluster_sizes()
        .iter()
        .map(|&n| {
            let mut y = DMatrix::zeros(n, 2 * m);
            for a in 0..m {
                let (t, c) = (slot(true, a), slot(false, a));
                let (b1, b0) = normal_pair(cfg.rho, rng);
                let mean0 = cfg.theta[c] + sb * b0;
                let mean1 = cfg.theta[t] + sb * b1;
                for i in 0..n {
                    let (u1, u0) = normal_pair(cfg.rho, rng);
                    y[(i, t)] = mean1 + sw * u1;
                    y[(i, c)] = mean0 + sw * u0;
                }
            }
            y
        })
        .collect();
    if cfg.center {
        let j = clusters.len() as f64;
        for col in 0..2 * m {
            let grand = clusters.iter().map(|y| y.column(col).mean()).sum::<f64>() / j;
            let shift = cfg.theta[col] - grand;
            for y in &mut clusters {
                y.column_mut(col).add_scalar_mut(shift);
            }
        }
    }
    PotentialOutcomeTable::new(m, clusters)
}

/// Applies one randomization draw to the table: `Y_ij = Y_ij(Z_ij, A_j)`.
pub fn realize_data<R: Rng + ?Sized>(table: &PotentialOutcomeTable, spec: &DesignSpec, rng: &mut R) -> Result<ExperimentData> {
    table.check_against(spec)?;
    let draw = draw_assignment(spec, rng);
    let clusters = table
        .clusters()
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let a = draw.mechanisms[j];
            let z = &draw.treatments[j];
            ClusterData {
                id: j.to_string(),
                mechanism: a,
                treated: z.clone(),
                outcomes: z.iter().enumerate().map(|(i, &t)| y[(i, slot(t, a))]).collect(),
            }
        })
        .collect();
    Ok(ExperimentData::from_clusters(table.num_mechanisms(), clusters, ArmPolicy::Reject)?.0)
}

/// Settings for a Monte Carlo power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSimConfig {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub n: usize,
    pub sigma2: f64,
    pub r: f64,
    pub rho: f64,
    pub mu: f64,
    pub alpha: f64,
    pub scheme: ThetaScheme,
    /// Draw a fresh `theta` in every replicate instead of once per setting.
    pub redraw_theta: bool,
    /// Draw the potential-outcome table once and only rerandomize.
    pub fixed_population: bool,
    /// Cluster sizes cycle through `0.6n, n, 1.4n`.
    pub unequal_sizes: bool,
}

impl PowerSimConfig {
    /// The design with `J` clusters implied by these settings.
    pub fn design(&self, j: usize) -> Result<DesignSpec> {
        let counts = cluster_counts_for(j, &self.q)?;
        let sizes = if self.unequal_sizes {
            (0..j)
                .map(|k| {
                    let f = [0.6, 1.0, 1.4][k % 3];
                    (f * self.n as f64).round() as usize
                })
                .collect()
        } else {
            vec![self.n; j]
        };
        DesignSpec::new(counts, sizes, self.p.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub kind: EffectKind,
    pub clusters: usize,
    pub reps: usize,
    pub rejections: usize,
    /// Replicates whose test could not be computed; counted as non-rejections.
    pub failures: usize,
    pub power: f64,
    pub se: f64,
    pub theta: Vec<f64>,
}

/// RNG for replicate `rep`; stream 0 is reserved for per-setting draws.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep + 1);
    rng
}

/// The `theta` used for the setting and, per replicate, one outcome per test.
pub type Rejections = (Vec<f64>, Vec<Vec<Result<bool>>>);

/// Rejection outcome of every replicate, in replicate order.
///
/// `Ok(true)` is a rejection, `Ok(false)` a non-rejection and `Err` a
/// replicate whose test failed numerically.
pub fn simulate_rejections(
    cfg: &PowerSimConfig,
    j: usize,
    kinds: &[EffectKind],
    reps: usize,
    seed: u64,
) -> Result<Rejections> {
    let spec = cfg.design(j)?;
    let m = spec.num_mechanisms();
    let mut setting_rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = generate_theta(&cfg.scheme, m, cfg.mu, &cfg.q, &mut setting_rng)?;
    let base = DgpConfig::from_total(theta.clone(), cfg.sigma2, cfg.r, cfg.rho, spec.clone());
    base.validate()?;
    let fixed = if cfg.fixed_population {
        Some(generate_potential_outcomes(&base, &mut setting_rng)?)
    } else {
        None
    };
    let outcomes: Vec<Result<Vec<Result<bool>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep as u64);
            let owned;
            let table = match &fixed {
                Some(t) => t,
                None => {
                    let dgp = if cfg.redraw_theta {
                        let theta = generate_theta(&cfg.scheme, m, cfg.mu, &cfg.q, &mut rng)?;
                        DgpConfig { theta, ..base.clone() }
                    } else {
                        base.clone()
                    };
                    owned = generate_potential_outcomes(&dgp, &mut rng)?;
                    &owned
                }
            };
            let data = realize_data(table, &spec, &mut rng)?;
            Ok(kinds
                .iter()
                .map(|&k| test_effect(&data, k, cfg.alpha).map(|t| t.reject))
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(reps);
    for o in outcomes {
        rows.push(o?);
    }
    Ok((theta, rows))
}

/// Fraction of `reps` replicates in which the `kind` test rejects at `alpha`.
///
/// Replicate `rep` draws from stream `rep + 1` of a generator seeded with
/// `seed`, so results do not depend on thread scheduling.
pub fn estimate_power(cfg: &PowerSimConfig, j: usize, kind: EffectKind, reps: usize, seed: u64) -> Result<PowerEstimate> {
    Ok(estimate_power_many(cfg, j, &[kind], reps, seed)?.remove(0))
}

/// As [`estimate_power`] for several tests on the same simulated data sets.
pub fn estimate_power_many(
    cfg: &PowerSimConfig,
    j: usize,
    kinds: &[EffectKind],
    reps: usize,
    seed: u64,
) -> Result<Vec<PowerEstimate>> {
    if reps == 0 {
        return Err(Error::InvalidParameter("at least one replicate is required".into()));
    }
    let (theta, rows) = simulate_rejections(cfg, j, kinds, reps, seed)?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut rejections = 0;
            let mut failures = 0;
            for row in &rows {
                match &row[k] {
                    Ok(true) => rejections += 1,
                    Ok(false) => {}
                    Err(_) => failures += 1,
                }
            }
            let power = rejections as f64 / reps as f64;
            PowerEstimate {
                kind,
                clusters: j,
                reps,
                rejections,
                failures,
                power,
                se: (power * (1.0 - power) / reps as f64).sqrt(),
                theta: theta.clone(),
            }
        })
        .collect())
}

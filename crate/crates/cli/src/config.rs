use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use twostage_core::EffectKind;

use crate::error::{CliError, Result};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_917;

/// Replicates for `simulate` when `--reps` is not given.
pub const DEFAULT_SIM_REPS: usize = 1000;

/// Clusters for `compare` when `--clusters` is not given.
pub const DEFAULT_COMPARE_CLUSTERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Estimate effects, standard errors, confidence intervals and Wald tests from a CSV file.
    Analyze,
    /// Required number of clusters for the direct, marginal direct and spillover tests.
    Power,
    /// Monte Carlo power at a given or formula-computed number of clusters.
    Simulate,
    /// Two-stage versus complete and cluster randomization.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffectArg {
    De,
    Mde,
    Se,
    All,
}

impl EffectArg {
    pub fn kinds(self) -> Vec<EffectKind> {
        match self {
            EffectArg::De => vec![EffectKind::De],
            EffectArg::Mde => vec![EffectKind::Mde],
            EffectArg::Se => vec![EffectKind::Se],
            EffectArg::All => EffectKind::ALL.to_vec(),
        }
    }
}

/// Design-based analysis and power for two-stage randomized experiments.
#[derive(Debug, Clone, Parser)]
#[command(name = "twostage", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Input CSV with header `cluster_id,mechanism,treated,outcome`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub effect: EffectArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Type II error; power is `1 - beta`.
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Effect size under the alternative.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Cluster size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Treated fraction per mechanism, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    /// Share of clusters per mechanism, comma separated (default: equal shares).
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
    /// Intracluster correlation.
    #[arg(long)]
    pub r: Option<f64>,
    /// Correlation between treated and control potential outcomes.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Total potential-outcome variance.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Number of clusters for `simulate` and `compare`.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Monte Carlo replicates (`simulate`) or randomization draws (`compare`).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Drop clusters with an empty treatment or control arm instead of failing.
    #[arg(long)]
    pub allow_drop: bool,
    /// Use the formulas that do not need `rho`.
    #[arg(long)]
    pub conservative: bool,
    /// Write a CSV of required clusters against `r` (power only).
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Report destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub effects: Vec<EffectKind>,
    pub alpha: f64,
    pub beta: f64,
    pub mu: Option<f64>,
    pub n: Option<usize>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Option<f64>,
    pub rho: Option<f64>,
    pub sigma2: f64,
    pub clusters: Option<usize>,
    pub reps: usize,
    pub seed: u64,
    pub allow_drop: bool,
    pub conservative: bool,
    pub sweep: Option<PathBuf>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn require<T: Copy>(value: Option<T>, flag: &str, command: Command) -> Result<T> {
    value.ok_or_else(|| CliError::Config(format!("--{flag} is required for {command:?}").to_lowercase()))
}

impl RunConfig {
    /// Fills defaults and checks that the command has what it needs.
    pub fn from_cli(cli: Cli) -> Result<Self> {
        let q = if cli.q.is_empty() && !cli.p.is_empty() {
            vec![1.0 / cli.p.len() as f64; cli.p.len()]
        } else {
            cli.q
        };
        let reps = cli.reps.unwrap_or(match cli.command {
            Command::Simulate => DEFAULT_SIM_REPS,
            _ => 0,
        });
        let cfg = RunConfig {
            command: cli.command,
            data: cli.data,
            effects: cli.effect.kinds(),
            alpha: cli.alpha,
            beta: cli.beta,
            mu: cli.mu,
            n: cli.n,
            p: cli.p,
            q,
            r: cli.r,
            rho: cli.rho,
            sigma2: cli.sigma2,
            clusters: cli.clusters,
            reps,
            seed: cli.seed,
            allow_drop: cli.allow_drop,
            conservative: cli.conservative,
            sweep: cli.sweep,
            out: cli.out,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.command;
        match c {
            Command::Analyze => {
                if self.data.is_none() {
                    return Err(CliError::Config("--data is required for analyze".into()));
                }
            }
            Command::Power | Command::Simulate | Command::Compare => {
                if self.p.is_empty() {
                    return Err(CliError::Config(format!("--p is required for {c:?}").to_lowercase()));
                }
                require(self.n, "n", c)?;
                require(self.r, "r", c)?;
                if c != Command::Compare {
                    require(self.mu, "mu", c)?;
                }
                if c == Command::Simulate {
                    require(self.rho, "rho", c)?;
                }
                if c == Command::Power && self.rho.is_none() && !self.conservative {
                    return Err(CliError::Config(
                        "power needs --rho or --conservative".into(),
                    ));
                }
                if c == Command::Simulate && self.reps == 0 {
                    return Err(CliError::Config("--reps must be positive".into()));
                }
            }
        }
        if self.sweep.is_some() && c != Command::Power {
            return Err(CliError::Config("--sweep only applies to power".into()));
        }
        Ok(())
    }

    /// `rho` as used by the sample-size formulas: dropped in conservative mode.
    pub fn formula_rho(&self) -> Option<f64> {
        if self.conservative {
            None
        } else {
            self.rho
        }
    }
}

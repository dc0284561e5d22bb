use std::fs;
use std::path::Path;

use twostage_core::compare::{analytic_variances, efficiency_ratios, matched_counts, mc_variances, NoInterferencePopulation, VarianceMode};
use twostage_core::distributions::normal_critical;
use twostage_core::estimation::contrast_for;
use twostage_core::inference::{standard_errors, test_contrast};
use twostage_core::power::sweep_r;
use twostage_core::simulation::replicate_rng;
use twostage_core::{
    covariance_hat, estimate_power, generate_potential_outcomes, mean_vector, sample_size, slot, variance_ade_hh,
    verify_equivalence, DesignSpec, DgpConfig, EffectKind, Error, ExperimentData, PowerConfig, PowerSimConfig,
    ThetaScheme,
};

use crate::config::{Command, RunConfig, DEFAULT_COMPARE_CLUSTERS};
use crate::error::{CliError, Result};
use crate::io::read_csv;
use crate::report::{
    Analysis, Comparison, DataSummary, DirectVariance, EffectReport, PowerEntry, Report, SampleSizeEntry, SweepEntry,
};

/// Tolerance for the regression equivalence check in `analyze`.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

/// Grid of `r` used by `--sweep`.
pub const SWEEP_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub fn run(cfg: &RunConfig) -> Result<Report> {
    match cfg.command {
        Command::Analyze => run_analyze(cfg),
        Command::Power => run_power(cfg),
        Command::Simulate => run_simulate(cfg),
        Command::Compare => run_compare(cfg),
    }
}

fn effect_labels(kind: EffectKind, labels: &[u64]) -> Vec<String> {
    let m = labels.len();
    match kind {
        EffectKind::De => labels.iter().map(|l| format!("de[{l}]")).collect(),
        EffectKind::Mde => vec!["mde".into()],
        EffectKind::Se => {
            let pair = |a: usize, z: u8| format!("se{z}[{}-{}]", labels[a], labels[a + 1]);
            (0..m - 1).map(|a| pair(a, 1)).chain((0..m - 1).map(|a| pair(a, 0))).collect()
        }
    }
}

fn analysis(data: &ExperimentData, labels: &[u64], cfg: &RunConfig, report: &mut Report) -> Result<Analysis> {
    let m = data.num_mechanisms();
    let j = data.num_clusters();
    let yhat = mean_vector(data)?;
    let dhat = covariance_hat(data)?;
    let z = normal_critical(0.05)?;

    let mut effects = Vec::new();
    for &kind in &cfg.effects {
        if kind == EffectKind::Se && m < 2 {
            report.warn("spillover effects need at least two mechanisms; skipped");
            continue;
        }
        let c = contrast_for(data, kind)?;
        let estimates: Vec<f64> = (c.matrix() * &yhat.values).iter().copied().collect();
        let std_errors = standard_errors(&c, &dhat, j);
        let test = test_contrast(data, &c, cfg.alpha)?;
        effects.push(EffectReport {
            effect: kind,
            labels: effect_labels(kind, labels),
            ci_lower: estimates.iter().zip(&std_errors).map(|(e, s)| e - z * s).collect(),
            ci_upper: estimates.iter().zip(&std_errors).map(|(e, s)| e + z * s).collect(),
            estimates,
            std_errors,
            test,
        });
    }

    let de = contrast_for(data, EffectKind::De)?;
    let de_cov = de.matrix() * &dhat.matrix * de.matrix().transpose();
    let mut direct_effect_variances = Vec::with_capacity(m);
    for (a, &label) in labels.iter().enumerate() {
        let variance_between_within = match variance_ade_hh(data, a) {
            Ok(v) => Some(v),
            Err(e @ Error::TinyArm { .. }) => {
                report.warn(format!("between-within variance for mechanism {label} unavailable: {e}"));
                None
            }
            Err(e) => return Err(e.into()),
        };
        direct_effect_variances.push(DirectVariance {
            mechanism: label,
            variance_block: de_cov[(a, a)] / j as f64,
            variance_between_within,
        });
    }

    let regression_check = verify_equivalence(data, EQUIVALENCE_TOL)?;
    if !regression_check.pass {
        report.warn(format!(
            "weighted regression differs from the design-based estimates by up to {:.3e}",
            regression_check.max_coefficient_gap.max(regression_check.max_covariance_gap)
        ));
    }

    let cell_labels = (0..2 * m)
        .map(|s| {
            let a = s / 2;
            format!("y{}[{}]", u8::from(slot(true, a) == s), labels[a])
        })
        .collect();
    Ok(Analysis {
        cell_means: yhat.values.iter().copied().collect(),
        cell_labels,
        covariance: dhat.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
        confidence_level: 0.95,
        effects,
        direct_effect_variances,
        regression_check,
    })
}

pub fn run_analyze(cfg: &RunConfig) -> Result<Report> {
    let path = cfg
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("--data is required for analyze".into()))?;
    let loaded = read_csv(path, cfg.allow_drop)?;
    let mut report = Report::new(cfg.clone());
    if !loaded.dropped.is_empty() {
        report.warn(format!(
            "dropped {} cluster(s) with an empty arm: {}",
            loaded.dropped.len(),
            loaded.dropped.join(", ")
        ));
    }
    let labels = &loaded.mechanism_labels;
    if labels.iter().enumerate().any(|(a, &l)| l != a as u64 + 1) {
        let map: Vec<String> = labels.iter().enumerate().map(|(a, l)| format!("{l}->{}", a + 1)).collect();
        report.warn(format!("mechanism labels relabeled densely: {}", map.join(", ")));
    }
    let data = &loaded.data;
    report.data = Some(DataSummary {
        clusters: data.num_clusters(),
        units: data.num_units(),
        mechanism_labels: labels.clone(),
        clusters_per_mechanism: data.cluster_counts(),
        dropped_clusters: loaded.dropped.clone(),
    });
    report.analysis = Some(analysis(data, labels, cfg, &mut report)?);
    Ok(report)
}

fn power_config(cfg: &RunConfig) -> Result<PowerConfig> {
    let missing = |f: &str| CliError::Config(format!("--{f} is required"));
    Ok(PowerConfig {
        p: cfg.p.clone(),
        q: cfg.q.clone(),
        n: cfg.n.ok_or_else(|| missing("n"))?,
        sigma2: cfg.sigma2,
        r: cfg.r.ok_or_else(|| missing("r"))?,
        rho: cfg.formula_rho(),
        mu: cfg.mu.ok_or_else(|| missing("mu"))?,
        alpha: cfg.alpha,
        beta: cfg.beta,
        allow_weak_conservative: false,
    })
}

pub fn write_sweep(path: &Path, rows: &[SweepEntry]) -> Result<()> {
    let mut text = String::from("r,J_de,J_mde,J_se\n");
    for row in rows {
        text.push_str(&format!("{},{},{},{}\n", row.r, row.j_de, row.j_mde, row.j_se));
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run_power(cfg: &RunConfig) -> Result<Report> {
    let pc = power_config(cfg)?;
    let mut report = Report::new(cfg.clone());
    let mut entries = Vec::new();
    for &kind in &cfg.effects {
        let res = sample_size(&pc, kind)?;
        for note in &res.notes {
            report.warn(format!("{}: {note}", kind.name()));
        }
        entries.push(SampleSizeEntry {
            effect: kind,
            clusters_required: res.j_required,
            clusters_raw: res.j_raw,
            dof: res.dof,
            noncentrality: res.lambda,
            denominator: res.denominator,
            attained: res.attained,
            notes: res.notes,
        });
    }
    report.sample_sizes = Some(entries);

    if let Some(path) = &cfg.sweep {
        let (rows, notes) = sweep_r(&pc, &SWEEP_GRID)?;
        for note in notes {
            report.warn(format!("sweep: {note}"));
        }
        let rows: Vec<SweepEntry> = rows
            .into_iter()
            .map(|r| SweepEntry {
                r: r.r,
                j_de: r.j_de,
                j_mde: r.j_mde,
                j_se: r.j_se,
            })
            .collect();
        write_sweep(path, &rows)?;
        report.sweep = Some(rows);
    }
    Ok(report)
}

pub fn run_simulate(cfg: &RunConfig) -> Result<Report> {
    let pc = power_config(cfg)?;
    let rho = cfg
        .rho
        .ok_or_else(|| CliError::Config("--rho is required for simulate".into()))?;
    let mut report = Report::new(cfg.clone());
    let mut entries = Vec::new();
    for &kind in &cfg.effects {
        let sim = PowerSimConfig {
            p: pc.p.clone(),
            q: pc.q.clone(),
            n: pc.n,
            sigma2: pc.sigma2,
            r: pc.r,
            rho,
            mu: pc.mu,
            alpha: pc.alpha,
            scheme: ThetaScheme::for_effect(kind),
            redraw_theta: false,
            fixed_population: false,
            unequal_sizes: false,
        };
        let (j, formula_clusters) = match cfg.clusters {
            Some(j) => (j, None),
            None => {
                let res = sample_size(&pc, kind)?;
                for note in &res.notes {
                    report.warn(format!("{}: {note}", kind.name()));
                }
                (res.j_required, Some(res.j_required))
            }
        };
        if sim.design(j)?.was_rounded() {
            report.warn("treated counts n * p were rounded half-up to integers");
        }
        let estimate = estimate_power(&sim, j, kind, cfg.reps, cfg.seed)?;
        if estimate.failures > 0 {
            report.warn(format!(
                "{}: {} replicate(s) could not be tested and count as non-rejections",
                kind.name(),
                estimate.failures
            ));
        }
        entries.push(PowerEntry {
            formula_clusters,
            estimate,
        });
    }
    report.power = Some(entries);
    Ok(report)
}

/// Population without interference whose between-cluster share of variance is `r`.
fn comparison_population(cfg: &RunConfig, j: usize, n: usize, r: f64) -> Result<NoInterferencePopulation> {
    let spec = DesignSpec::new(vec![j], vec![n; j], vec![0.5])?;
    let effect = cfg.mu.unwrap_or(0.0);
    let dgp = DgpConfig::from_total(vec![effect, 0.0], cfg.sigma2, r, cfg.rho.unwrap_or(0.0), spec);
    let mut rng = replicate_rng(cfg.seed, u64::MAX - 1);
    let table = generate_potential_outcomes(&dgp, &mut rng)?;
    let column = |s: usize| -> Vec<Vec<f64>> {
        table
            .clusters()
            .iter()
            .map(|y| y.column(s).iter().copied().collect())
            .collect()
    };
    Ok(NoInterferencePopulation::new(column(slot(true, 0)), column(slot(false, 0)))?)
}

pub fn run_compare(cfg: &RunConfig) -> Result<Report> {
    let missing = |f: &str| CliError::Config(format!("--{f} is required"));
    let n = cfg.n.ok_or_else(|| missing("n"))?;
    let r = cfg.r.ok_or_else(|| missing("r"))?;
    let j = cfg.clusters.unwrap_or(DEFAULT_COMPARE_CLUSTERS);
    let mut report = Report::new(cfg.clone());

    let spec = DesignSpec::balanced(j, n, &cfg.p, &cfg.q)?;
    if spec.was_rounded() {
        report.warn("treated counts n * p were rounded half-up to integers");
    }
    let pop = comparison_population(cfg, j, n, r)?;
    let (treated_units, treated_clusters) = matched_counts(&spec)?;
    let exact = analytic_variances(&pop, &spec, VarianceMode::Exact)?;
    let approximate = analytic_variances(&pop, &spec, VarianceMode::Approximate { r })?;
    let ratios = efficiency_ratios(r, n, &cfg.p, &cfg.q)?;
    if ratios.cluster_infinite {
        report.warn("r = 0: cluster randomization has no between-cluster variance and the cluster ratio is infinite");
    }
    let monte_carlo = if cfg.reps > 0 {
        Some(mc_variances(&pop, &spec, cfg.reps, cfg.seed)?)
    } else {
        None
    };
    report.comparison = Some(Comparison {
        clusters: j,
        cluster_size: n,
        population_icc: pop.icc(),
        population_ate: pop.ate(),
        treated_units,
        treated_clusters,
        exact,
        approximate,
        ratios,
        monte_carlo,
    });
    Ok(report)
}

/// Writes the report to `out`, or to stdout.
pub fn emit(report: &Report, out: Option<&Path>) -> Result<()> {
    let text = report.to_json();
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Output(e.to_string()))
        }
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use twostage_core::compare::{analytic_variances, efficiency_ratios, mc_variances, NoInterferencePopulation, VarianceMode};
use twostage_core::power::{noncentrality, PowerConfig};
use twostage_core::simulation::{estimate_power_many, PowerSimConfig, ThetaScheme};
use twostage_core::{
    covariance_hat, hc2_cluster_cov, mean_vector, min_quadratic_on_s, sample_size, slot, true_covariance, wls_fit,
    ArmPolicy, ClusterData, DesignSpec, EffectKind, ExperimentData, PotentialOutcomeTable,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// exhaustive enumeration on m = 2, J = 4, J_a = (2, 2), n_j = 3, n_j1 = (1, 2)

fn tiny_design() -> DesignSpec {
    DesignSpec::with_treated_counts(vec![2, 2], vec![3; 4], vec![1.0 / 3.0, 2.0 / 3.0], vec![vec![1, 2]; 4]).unwrap()
}

fn random_table(seed: u64) -> PotentialOutcomeTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (0..4)
        .map(|j| DMatrix::from_fn(3, 4, |_, c| j as f64 * 0.3 + c as f64 + rng.random_range(-1.0..1.0)))
        .collect();
    PotentialOutcomeTable::new(2, clusters).unwrap()
}

/// Every cluster has the same mean in every `(z, a)` column.
fn constant_means_table(seed: u64) -> PotentialOutcomeTable {
    let mut table = random_table(seed);
    for y in table.clusters_mut() {
        for c in 0..4 {
            let m = y.column(c).mean();
            y.column_mut(c).add_scalar_mut(c as f64 - m);
        }
    }
    table
}

struct Enumeration {
    count: usize,
    yhat: Vec<DVector<f64>>,
    dhat: Vec<DMatrix<f64>>,
}

fn enumerate(table: &PotentialOutcomeTable, spec: &DesignSpec) -> Enumeration {
    let mut out = Enumeration {
        count: 0,
        yhat: Vec::new(),
        dhat: Vec::new(),
    };
    for code in 0..16u32 {
        if code.count_ones() != 2 {
            continue;
        }
        let mech: Vec<usize> = (0..4).map(|j| ((code >> j) & 1) as usize).collect();
        for sub in 0..81usize {
            let mut s = sub;
            let clusters: Vec<ClusterData> = (0..4)
                .map(|j| {
                    let k = s % 3;
                    s /= 3;
                    let a = mech[j];
                    let n1 = spec.treated(j, a);
                    let treated: Vec<bool> = (0..3).map(|i| if n1 == 1 { i == k } else { i != k }).collect();
                    let outcomes = treated
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| table.clusters()[j][(i, slot(t, a))])
                        .collect();
                    ClusterData {
                        id: j.to_string(),
                        mechanism: a,
                        treated,
                        outcomes,
                    }
                })
                .collect();
            let data = ExperimentData::from_clusters(2, clusters, ArmPolicy::Reject).unwrap().0;
            out.yhat.push(mean_vector(&data).unwrap().values);
            out.dhat.push(covariance_hat(&data).unwrap().matrix);
            out.count += 1;
        }
    }
    out
}

fn enumeration_mean(e: &Enumeration) -> DVector<f64> {
    e.yhat.iter().fold(DVector::zeros(4), |acc, y| acc + y) / e.count as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = tiny_design();
    let table = random_table(1);
    let e = enumerate(&table, &spec);
    let err = (enumeration_mean(&e) - table.true_means().values).amax();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        e.count == 486 && err <= 1e-12 && secs < 1.0,
        format!("{} realizations, max |E[Y_hat] - Ybar| = {err:.2e}, {secs:.3}s", e.count),
    )
}

fn criterion_2() -> Outcome {
    let spec = tiny_design();
    let table = random_table(2);
    let e = enumerate(&table, &spec);
    let mean = enumeration_mean(&e);
    let mut cov = DMatrix::zeros(4, 4);
    for y in &e.yhat {
        let d = y - &mean;
        cov += &d * d.transpose();
    }
    let empirical = cov * (4.0 / e.count as f64);
    let oracle = true_covariance(&table, &spec).unwrap().matrix;
    let err = (empirical - oracle).amax();
    outcome(err <= 1e-12, format!("max |J cov(Y_hat) - D| = {err:.2e}"))
}

fn criterion_3() -> Outcome {
    let spec = tiny_design();
    let gap = |table: &PotentialOutcomeTable| {
        let e = enumerate(table, &spec);
        let mean_d = e.dhat.iter().fold(DMatrix::zeros(4, 4), |acc, d| acc + d) / e.count as f64;
        mean_d - true_covariance(table, &spec).unwrap().matrix
    };
    let general = gap(&random_table(3));
    let min_eig = general.symmetric_eigen().eigenvalues.min();
    let constant = gap(&constant_means_table(4)).amax();
    outcome(
        min_eig >= -1e-10 && constant <= 1e-10,
        format!("min eig(E[D_hat] - D) = {min_eig:.3e}; constant cluster means: max |E[D_hat] - D| = {constant:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_b = 0.0f64;
    let mut worst_v = 0.0f64;
    let mut all = true;
    for _ in 0..100 {
        let mut clusters = Vec::new();
        for j in 0..9 {
            let n = rng.random_range(4..=8);
            let n1 = rng.random_range(1..n);
            let mut treated: Vec<bool> = (0..n).map(|i| i < n1).collect();
            rand::seq::SliceRandom::shuffle(treated.as_mut_slice(), &mut rng);
            let level = rng.random_range(-2.0..2.0);
            clusters.push(ClusterData {
                id: format!("c{j}"),
                mechanism: j % 3,
                treated,
                outcomes: (0..n).map(|_| level + rng.random_range(-1.0..1.0)).collect(),
            });
        }
        let data = ExperimentData::from_clusters(3, clusters, ArmPolicy::Reject).unwrap().0;
        let fit = wls_fit(&data).unwrap();
        let hc2 = hc2_cluster_cov(&data, &fit).unwrap();
        let yhat = mean_vector(&data).unwrap().values;
        let dhat = covariance_hat(&data).unwrap().matrix / 9.0;
        let b = (&fit.coefficients - yhat).amax();
        let v = (hc2 - dhat).amax();
        worst_b = worst_b.max(b);
        worst_v = worst_v.max(v);
        all &= b <= 1e-10 && v <= 1e-10;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        all && secs < 5.0,
        format!("max |beta - Y_hat| = {worst_b:.2e}, max |HC2 - D_hat/J| = {worst_v:.2e}, {secs:.3}s"),
    )
}

/// Independent noncentral chi-square tail: Poisson mixture summed upward from 0
/// until the remaining Poisson mass is below `1e-12` of the accumulated sum.
fn oracle_ncx2_sf(x: f64, k: f64, lambda: f64) -> f64 {
    let mu = lambda / 2.0;
    let mut total = 0.0;
    let mut mass = 0.0;
    for j in 0..10_000 {
        let w = (-mu + j as f64 * mu.ln() - ln_gamma(j as f64 + 1.0)).exp();
        let d = ChiSquared::new(k + 2.0 * j as f64).unwrap();
        total += w * (1.0 - d.cdf(x));
        mass += w;
        if j as f64 > mu && 1.0 - mass < 1e-12 * total {
            break;
        }
    }
    total
}

fn criterion_5() -> Outcome {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let closed = (normal.inverse_cdf(0.975) + normal.inverse_cdf(0.8)).powi(2);
    let q1 = ChiSquared::new(1.0).unwrap().inverse_cdf(0.95);
    let l1 = noncentrality(q1, 1, 0.2).unwrap();
    let mut ok = (l1 - 7.8489).abs() <= 1e-4 && (l1 - closed).abs() <= 1e-4;
    let mut worst = 0.0f64;
    for k in 1..=6 {
        let q = ChiSquared::new(k as f64).unwrap().inverse_cdf(0.95);
        let l = noncentrality(q, k, 0.2).unwrap();
        let res = (oracle_ncx2_sf(q, k as f64, l) - 0.8).abs();
        worst = worst.max(res);
        ok &= res <= 1e-9;
    }
    outcome(
        ok,
        format!("lambda(k=1) = {l1:.6} (closed form {closed:.6}); max residual k=1..6 = {worst:.2e}"),
    )
}

fn table2(sigma2: f64, r: f64) -> PowerConfig {
    PowerConfig {
        p: vec![0.25, 0.5, 0.75],
        q: vec![1.0 / 3.0; 3],
        n: 100,
        sigma2,
        r,
        rho: None,
        mu: 0.03,
        alpha: 0.05,
        beta: 0.2,
        allow_weak_conservative: false,
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let rows = [
        ("PC", 0.167, [(405, 455, 428), (92, 105, 97), (480, 545, 512)]),
        ("LTFC", 0.195, [(485, 545, 516), (110, 125, 116), (575, 655, 614)]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, sigma2, ranges) in rows {
        let cfg = table2(sigma2, 0.02);
        let mut cells = Vec::new();
        for (kind, (lo, hi, published)) in EffectKind::ALL.into_iter().zip(ranges) {
            let j = sample_size(&cfg, kind).unwrap().j_required;
            ok &= (lo..=hi).contains(&j);
            cells.push(format!("{}={j} (ref {published})", kind.name()));
        }
        parts.push(format!("{name}: {}", cells.join(" ")));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    outcome(ok, format!("{}; {secs:.3}s", parts.join("; ")))
}

fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(k, k) * 0.05
}

/// Minimum of `a t^2 + b t + c` over `[lo, hi]`.
fn min_quad_1d(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> f64 {
    let f = |t: f64| a * t * t + b * t + c;
    let mut best = f(lo).min(f(hi));
    let t = -b / (2.0 * a);
    if a > 0.0 && t > lo && t < hi {
        best = best.min(f(t));
    }
    best
}

/// 401 x 401 grid over the square; the best boundary point is then refined
/// exactly on the grid cell of its edge.
fn grid_min(q: &DMatrix<f64>) -> f64 {
    let h = 2.0 / 400.0;
    let f = |s: f64, t: f64| q[(0, 0)] * s * s + 2.0 * q[(0, 1)] * s * t + q[(1, 1)] * t * t;
    let mut best = f64::INFINITY;
    let mut arg = (0usize, 0.0f64, 1.0f64);
    for i in 0..=400 {
        for j in 0..=400 {
            let (s, t) = (-1.0 + i as f64 * h, -1.0 + j as f64 * h);
            if s.abs().max(t.abs()) < 1.0 - 1e-12 {
                continue;
            }
            let v = f(s, t);
            if v < best {
                best = v;
                arg = if i == 0 || i == 400 { (0, t, s) } else { (1, s, t) };
            }
        }
    }
    let (edge, free, fixed) = arg;
    let (lo, hi) = ((free - h).max(-1.0), (free + h).min(1.0));
    let refined = if edge == 0 {
        min_quad_1d(q[(1, 1)], 2.0 * q[(0, 1)] * fixed, q[(0, 0)], lo, hi)
    } else {
        min_quad_1d(q[(0, 0)], 2.0 * q[(0, 1)] * fixed, q[(1, 1)], lo, hi)
    };
    best.min(refined)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..20 {
        let m = random_spd(2, &mut rng);
        let q = m.clone().try_inverse().unwrap();
        let (v, _) = min_quadratic_on_s(&m).unwrap();
        let d = (v - grid_min(&q)).abs();
        worst = worst.max(d);
        ok &= d <= 1e-6;
    }
    let m = random_spd(6, &mut rng);
    let q = m.clone().try_inverse().unwrap();
    let (v, _) = min_quadratic_on_s(&m).unwrap();
    let mut below = 0;
    for _ in 0..500 {
        let mut s = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let c = rng.random_range(0..6);
        s[c] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if v <= s.dot(&(&q * &s)) {
            below += 1;
        }
    }
    ok &= below == 500;
    outcome(
        ok,
        format!("m=2: max |QP - grid| = {worst:.2e} over 20 matrices; m=4: below {below}/500 feasible points"),
    )
}

fn sim_config(r: f64, rho: f64, n: usize, scheme: ThetaScheme) -> PowerSimConfig {
    PowerSimConfig {
        p: vec![0.25, 0.5, 0.75],
        q: vec![1.0 / 3.0; 3],
        n,
        sigma2: 1.0,
        r,
        rho,
        mu: 0.5,
        alpha: 0.05,
        scheme,
        redraw_theta: false,
        fixed_population: false,
        unequal_sizes: false,
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, r) in [0.2, 0.6].into_iter().enumerate() {
        for (k, kind) in EffectKind::ALL.into_iter().enumerate() {
            let cfg = PowerConfig {
                p: vec![0.25, 0.5, 0.75],
                q: vec![1.0 / 3.0; 3],
                n: 20,
                sigma2: 1.0,
                r,
                rho: None,
                mu: 0.5,
                alpha: 0.05,
                beta: 0.2,
                allow_weak_conservative: false,
            };
            let j = sample_size(&cfg, kind).unwrap().j_required;
            let sim = sim_config(r, 0.3, 20, ThetaScheme::for_effect(kind));
            let est = estimate_power_many(&sim, j, &[kind], 1000, 800 + (3 * i + k) as u64).unwrap();
            let p = est[0].power;
            ok &= p >= 0.78;
            parts.push(format!("r={r} {}: J={j} power={p:.3}", kind.name()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    outcome(ok, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let sim = sim_config(0.2, 0.3, 10, ThetaScheme::null(3));
    let bound = 0.05 + 2.0 * 0.0049;
    let est = estimate_power_many(&sim, 150, &EffectKind::ALL, 2000, 900).unwrap();
    let ok = est.iter().all(|e| e.power <= bound && e.failures == 0);
    let parts: Vec<String> = est.iter().map(|e| format!("{}={:.4}", e.kind.name(), e.power)).collect();
    outcome(ok, format!("rejection rates {} (bound {bound:.4})", parts.join(" ")))
}

fn criterion_10() -> Outcome {
    let (j, n) = (30, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut y1 = Vec::new();
    let mut y0 = Vec::new();
    for _ in 0..j {
        let level: f64 = rng.random_range(-1.0..1.0);
        let effect: f64 = rng.random_range(0.0..1.0);
        let base: Vec<f64> = (0..n).map(|_| level + rng.random_range(-1.5..1.5)).collect();
        y1.push(base.iter().map(|v| v + effect + rng.random_range(-0.5..0.5)).collect());
        y0.push(base);
    }
    let pop = NoInterferencePopulation::new(y1, y0).unwrap();
    let spec = DesignSpec::new(vec![10, 10, 10], vec![n; j], vec![0.2, 0.5, 0.8]).unwrap();
    let exact = analytic_variances(&pop, &spec, VarianceMode::Exact).unwrap();
    let mc = mc_variances(&pop, &spec, 20_000, 1010).unwrap();
    let rel = [
        (exact.two_stage / mc.two_stage - 1.0).abs(),
        (exact.complete / mc.complete - 1.0).abs(),
        (exact.cluster / mc.cluster - 1.0).abs(),
    ];
    let mut ok = rel.iter().all(|&e| e <= 0.05);

    let eq = efficiency_ratios(0.3, n, &[0.5, 0.5, 0.5], &[0.25, 0.25, 0.5]).unwrap();
    ok &= eq.ratio_complete == 1.0 - 0.3;

    let mut below = 0;
    for _ in 0..1000 {
        let m = rng.random_range(2..6);
        let p: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..0.99)).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| x / total).collect();
        let r = rng.random_range(0.0..1.0);
        let e = efficiency_ratios(r, n, &p, &q).unwrap();
        if e.ratio_complete < (1.0 - r) * (1.0 - 1e-12) {
            below += 1;
        }
    }
    ok &= below == 0;
    outcome(
        ok,
        format!(
            "relative MC gaps two-stage {:.3} complete {:.3} cluster {:.3}; equal-p ratio {}; {below} of 1000 below 1-r",
            rel[0], rel[1], rel[2], eq.ratio_complete
        ),
    )
}

fn criterion_11() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    for (n, sigma2) in [(100usize, 0.167), (20, 1.0)] {
        for kind in EffectKind::ALL {
            let raw = |r: f64| {
                let cfg = PowerConfig { n, ..table2(sigma2, r) };
                sample_size(&cfg, kind).unwrap().j_raw
            };
            let (r1, r2, r3) = (0.1, 0.4, 0.7);
            let (a, b, c) = (raw(r1), raw(r2), raw(r3));
            let predicted = a + (b - a) * (r3 - r1) / (r2 - r1);
            let res = (c - predicted).abs();
            worst = worst.max(res);
            ok &= res <= 1e-10;
        }
    }
    outcome(ok, format!("max two-point fit residual = {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exact unbiasedness by enumeration", criterion_1),
        ("exact covariance by enumeration", criterion_2),
        ("conservative covariance estimator", criterion_3),
        ("weighted regression equivalence", criterion_4),
        ("noncentrality solver", criterion_5),
        ("required clusters for the job-search outcomes", criterion_6),
        ("spillover quadratic program", criterion_7),
        ("power at computed J", criterion_8),
        ("type I error under the null", criterion_9),
        ("design comparison", criterion_10),
        ("linearity of J in r", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Noncentrality solver and sample-size formulas for the Wald tests.
//!
//! All simplified formulas assume equal cluster sizes `n`, between-cluster
//! variance `r * sigma2` and within-cluster variance `(1 - r) * sigma2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastMatrix, EffectKind};
use crate::distributions::{chi2_quantile, chi2_sf, ncx2_sf};
use crate::error::{Error, Result};
use crate::qp::min_quadratic_on_s;

/// Note attached to every result of the general formula.
pub const INVERSE_FORM_NOTE: &str =
    "general sample size uses the inverse quadratic form x'(C E[D] C')^{-1} x";

/// Parameters shared by the simplified sample-size formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    /// Treated fraction per mechanism.
    pub p: Vec<f64>,
    /// Share of clusters per mechanism.
    pub q: Vec<f64>,
    pub n: usize,
    pub sigma2: f64,
    pub r: f64,
    /// Potential-outcome correlation; `None` selects the conservative formulas.
    pub rho: Option<f64>,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Report, rather than reject, `r < 1/(n+1)` in conservative mode.
    #[serde(default)]
    pub allow_weak_conservative: bool,
}

impl PowerConfig {
    pub fn num_mechanisms(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.p.len();
        if m == 0 || self.q.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{} treated fractions and {} mechanism shares",
                m,
                self.q.len()
            )));
        }
        for &pa in &self.p {
            if !(pa > 0.0 && pa < 1.0) {
                return Err(Error::BadProbability { name: "p", value: pa });
            }
        }
        for &qa in &self.q {
            if !(qa > 0.0 && qa <= 1.0) {
                return Err(Error::OutOfRange(format!("mechanism share {qa}")));
            }
        }
        let total: f64 = self.q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange(format!("mechanism shares sum to {total}")));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("cluster size {}", self.n)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma2 = {}", self.sigma2)));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::OutOfRange(format!("r = {}", self.r)));
        }
        if let Some(rho) = self.rho {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::OutOfRange(format!("rho = {rho}")));
            }
        }
        if self.mu == 0.0 {
            return Err(Error::ZeroAlternative);
        }
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(Error::InvalidParameter(format!("mu = {}", self.mu)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::BadProbability { name, value: v });
            }
        }
        Ok(())
    }

    /// `1/(n+1)`, the smallest `r` for which dropping `rho` is conservative.
    pub fn conservative_bound(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    fn check_conservative(&self, notes: &mut Vec<String>) -> Result<()> {
        let bound = self.conservative_bound();
        if self.rho.is_none() && self.r < bound {
            if self.allow_weak_conservative {
                notes.push(format!(
                    "r = {} is below 1/(n+1) = {bound:.6}; the rho-free formula may not be conservative",
                    self.r
                ));
            } else {
                return Err(Error::ConservativeConditionViolated { r: self.r, bound });
            }
        }
        Ok(())
    }

    fn d0(&self, a: usize) -> DMatrix<f64> {
        d0_block(self.p[a], self.q[a], self.n, self.r, self.rho.unwrap_or(0.0))
    }
}

/// Which quantity attained the extremum in the denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attained {
    /// The DE formula: the 0-based mechanism with the largest variance term.
    Mechanism(usize),
    /// The MDE formula sums over all mechanisms.
    Sum,
    /// The SE formula: the minimiser of the quadratic form.
    Minimizer(Vec<f64>),
    /// The general formula with a user-supplied alternative.
    Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub j_required: usize,
    pub j_raw: f64,
    pub dof: usize,
    pub lambda: f64,
    /// The variance factor (DE, MDE) or the quadratic-form minimum (SE, general).
    pub denominator: f64,
    pub attained: Attained,
    pub notes: Vec<String>,
}

/// The noncentrality `lambda` for which `P(X_{k, lambda} >= threshold) = 1 - beta`.
pub fn noncentrality(threshold: f64, k: usize, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BadProbability { name: "beta", value: beta });
    }
    if !(threshold > 0.0 && threshold.is_finite()) || k == 0 {
        return Err(Error::InvalidParameter(format!("threshold {threshold}, dof {k}")));
    }
    let kf = k as f64;
    let target = 1.0 - beta;
    if chi2_sf(threshold, kf) >= target {
        return Ok(0.0);
    }
    let f = |lambda: f64| ncx2_sf(threshold, kf, lambda) - target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::NoConvergence("noncentrality bracket".into()));
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() <= 1e-13 || hi - lo <= 1e-14 * hi {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if f(mid).abs() <= 1e-9 {
        Ok(mid)
    } else {
        Err(Error::NoConvergence("noncentrality bisection".into()))
    }
}

/// `lambda` for a level-`alpha` test with `k` degrees of freedom and power `1 - beta`.
pub fn noncentrality_for(alpha: f64, k: usize, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadProbability { name: "alpha", value: alpha });
    }
    noncentrality(chi2_quantile(1.0 - alpha, k as f64)?, k, beta)
}

/// Per-mechanism block of the simplified covariance, in units of `sigma2`.
///
/// `rho = 0` gives the diagonal block used by the conservative formulas.
pub fn d0_block(p: f64, q: f64, n: usize, r: f64, rho: f64) -> DMatrix<f64> {
    let nf = n as f64;
    let v1 = r + (1.0 - p) * (1.0 - r) / (nf * p);
    let v0 = r + p * (1.0 - r) / (nf * (1.0 - p));
    let c = rho * (r - (1.0 - r) / nf);
    DMatrix::from_row_slice(2, 2, &[v1, c, c, v0]) / q
}

/// The full `2m x 2m` block-diagonal simplified covariance in units of `sigma2`.
pub fn d0_matrix(cfg: &PowerConfig) -> DMatrix<f64> {
    let m = cfg.num_mechanisms();
    let mut d = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..m {
        d.view_mut((2 * a, 2 * a), (2, 2)).copy_from(&cfg.d0(a));
    }
    d
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest denominator `<= 1000` representing `x` within `1e-9`.
fn rational_denominator(x: f64) -> Option<u64> {
    (1..=1000u64).find(|&d| {
        let num = (x * d as f64).round();
        (x * d as f64 - num).abs() <= 1e-9 * d as f64
    })
}

/// Rounds `j_raw` up to an integer `J` for which every `q_a * J` is integral.
///
/// Falls back to a plain ceiling (with a note) when some `q_a` is not a
/// rational with denominator at most 1000.
pub fn ceiling_policy(j_raw: f64, q: &[f64], notes: &mut Vec<String>) -> usize {
    let base = j_raw.ceil().max(1.0) as usize;
    let mut lcm = 1u64;
    for &qa in q {
        match rational_denominator(qa) {
            Some(d) => lcm = lcm / gcd(lcm, d) * d,
            None => {
                notes.push(format!(
                    "mechanism share {qa} is not a small rational; J is a plain ceiling"
                ));
                return base;
            }
        }
    }
    let l = lcm as usize;
    base.div_ceil(l) * l
}

/// General sample size for the alternative `C * Ybar = x`:
/// `J_raw = lambda / (x' (C E[D] C')^{-1} x)`.
pub fn sample_size_general(
    c: &ContrastMatrix,
    expected_d: &DMatrix<f64>,
    x: &DVector<f64>,
    alpha: f64,
    beta: f64,
    q: Option<&[f64]>,
) -> Result<SampleSizeResult> {
    let cm = c.matrix();
    if x.len() != cm.nrows() || expected_d.nrows() != cm.ncols() || expected_d.ncols() != cm.ncols() {
        return Err(Error::ShapeMismatch("alternative, contrast and covariance disagree".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroAlternative);
    }
    let s = cm * expected_d * cm.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let (lmin, lmax) = (eig.min(), eig.max());
    if !(lmin > 0.0 && lmax / lmin <= crate::inference::CONDITION_LIMIT) {
        let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        return Err(Error::SingularCovariance { condition });
    }
    let chol = s.cholesky().ok_or(Error::NotSpd)?;
    let quad = x.dot(&chol.solve(x));
    let k = c.rank();
    let lambda = noncentrality_for(alpha, k, beta)?;
    let j_raw = lambda / quad;
    let mut notes = vec![INVERSE_FORM_NOTE.to_string()];
    let j_required = match q {
        Some(q) => ceiling_policy(j_raw, q, &mut notes),
        None => j_raw.ceil().max(1.0) as usize,
    };
    Ok(SampleSizeResult {
        j_required,
        j_raw,
        dof: k,
        lambda,
        denominator: quad,
        attained: Attained::Alternative,
        notes,
    })
}

fn contrast_variance(d: &DMatrix<f64>) -> f64 {
    d[(0, 0)] + d[(1, 1)] - 2.0 * d[(0, 1)]
}

/// Clusters needed to detect `max_a |ADE(a)| = mu` with the DE test.
pub fn sample_size_de(cfg: &PowerConfig) -> Result<SampleSizeResult> {
    cfg.validate()?;
    let mut notes = Vec::new();
    cfg.check_conservative(&mut notes)?;
    let m = cfg.num_mechanisms();
    let (arg, worst) = (0..m)
        .map(|a| (a, contrast_variance(&cfg.d0(a))))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let lambda = noncentrality_for(cfg.alpha, m, cfg.beta)?;
    let j_raw = lambda * cfg.sigma2 / (cfg.mu * cfg.mu) * worst;
    Ok(SampleSizeResult {
        j_required: ceiling_policy(j_raw, &cfg.q, &mut notes),
        j_raw,
        dof: m,
        lambda,
        denominator: worst,
        attained: Attained::Mechanism(arg),
        notes,
    })
}

/// Clusters needed to detect `MDE = mu` with the MDE test.
pub fn sample_size_mde(cfg: &PowerConfig) -> Result<SampleSizeResult> {
    cfg.validate()?;
    let mut notes = Vec::new();
    cfg.check_conservative(&mut notes)?;
    let total: f64 = (0..cfg.num_mechanisms())
        .map(|a| cfg.q[a] * cfg.q[a] * contrast_variance(&cfg.d0(a)))
        .sum();
    let lambda = noncentrality_for(cfg.alpha, 1, cfg.beta)?;
    let j_raw = lambda * cfg.sigma2 / (cfg.mu * cfg.mu) * total;
    Ok(SampleSizeResult {
        j_required: ceiling_policy(j_raw, &cfg.q, &mut notes),
        j_raw,
        dof: 1,
        lambda,
        denominator: total,
        attained: Attained::Sum,
        notes,
    })
}

/// Clusters needed to detect a largest adjacent spillover effect of `mu` with the SE test.
///
/// The minimiser is ordered like the rows of the spillover contrast: the
/// treated block first, then the control block.
pub fn sample_size_se(cfg: &PowerConfig) -> Result<SampleSizeResult> {
    cfg.validate()?;
    let m = cfg.num_mechanisms();
    if m < 2 {
        return Err(Error::BadKind("spillover sample size needs at least two mechanisms".into()));
    }
    let c3 = ContrastMatrix::build(EffectKind::Se, m, &cfg.q)?;
    let d0 = d0_matrix(cfg);
    let mm = c3.matrix() * d0 * c3.matrix().transpose();
    let (value, s) = min_quadratic_on_s(&mm)?;
    let k = 2 * (m - 1);
    let lambda = noncentrality_for(cfg.alpha, k, cfg.beta)?;
    let j_raw = lambda * cfg.sigma2 / (cfg.mu * cfg.mu * value);
    let mut notes = Vec::new();
    Ok(SampleSizeResult {
        j_required: ceiling_policy(j_raw, &cfg.q, &mut notes),
        j_raw,
        dof: k,
        lambda,
        denominator: value,
        attained: Attained::Minimizer(s.iter().copied().collect()),
        notes,
    })
}

pub fn sample_size(cfg: &PowerConfig, kind: EffectKind) -> Result<SampleSizeResult> {
    match kind {
        EffectKind::De => sample_size_de(cfg),
        EffectKind::Mde => sample_size_mde(cfg),
        EffectKind::Se => sample_size_se(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub j_de: usize,
    pub j_mde: usize,
    pub j_se: usize,
}

/// Required clusters for all three tests over a grid of `r`.
///
/// Conservative-mode violations of `r >= 1/(n+1)` are reported as notes.
pub fn sweep_r(cfg: &PowerConfig, rs: &[f64]) -> Result<(Vec<SweepRow>, Vec<String>)> {
    let mut rows = Vec::with_capacity(rs.len());
    let mut notes = Vec::new();
    for &r in rs {
        let c = PowerConfig {
            r,
            allow_weak_conservative: true,
            ..cfg.clone()
        };
        let de = sample_size_de(&c)?;
        let mde = sample_size_mde(&c)?;
        let se = sample_size_se(&c)?;
        for note in de.notes.iter().chain(&mde.notes).chain(&se.notes) {
            if !notes.contains(note) {
                notes.push(note.clone());
            }
        }
        rows.push(SweepRow {
            r,
            j_de: de.j_required,
            j_mde: mde.j_required,
            j_se: se.j_required,
        });
    }
    Ok((rows, notes))
}

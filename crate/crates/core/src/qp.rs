//! Small dense box-constrained convex quadratic programs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of `min 0.5 x'Hx + g'x` subject to `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Upper bound on `objective - optimum` from the linearised lower bound.
    pub gap: f64,
}

fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + g.dot(x)
}

/// `f(x) - min_box [f(x) + grad'(y - x)]`, an upper bound on suboptimality.
fn duality_gap(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let grad = h * x + g;
    let mut gap = 0.0;
    for i in 0..x.len() {
        gap -= (grad[i] * (lo[i] - x[i])).min(grad[i] * (hi[i] - x[i]));
    }
    gap.max(0.0)
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

fn active_set(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Option<DVector<f64>> {
    let n = g.len();
    let mut state = vec![Bound::Free; n];
    let mut x = DVector::from_iterator(n, (0..n).map(|i| 0.0f64.clamp(lo[i], hi[i])));
    for (i, s) in state.iter_mut().enumerate() {
        if x[i] == lo[i] {
            *s = Bound::Lower;
        } else if x[i] == hi[i] {
            *s = Bound::Upper;
        }
    }
    for _ in 0..(50 * (n + 1)) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let mut target = x.clone();
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                let mut r = -g[i];
                for j in 0..n {
                    if state[j] != Bound::Free {
                        r -= h[(i, j)] * x[j];
                    }
                }
                r
            });
            let sol = hff.cholesky()?.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                target[i] = sol[a];
            }
        }
        // step towards the subspace minimiser, stopping at the first bound hit
        let mut step = 1.0;
        let mut blocking = None;
        for &i in &free {
            let d = target[i] - x[i];
            if d < 0.0 && target[i] < lo[i] {
                let s = (lo[i] - x[i]) / d;
                if s < step {
                    step = s;
                    blocking = Some((i, Bound::Lower));
                }
            } else if d > 0.0 && target[i] > hi[i] {
                let s = (hi[i] - x[i]) / d;
                if s < step {
                    step = s;
                    blocking = Some((i, Bound::Upper));
                }
            }
        }
        for &i in &free {
            x[i] += step * (target[i] - x[i]);
        }
        if let Some((i, b)) = blocking {
            x[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
            state[i] = b;
            continue;
        }
        // optimal on the current face; check multipliers of the fixed variables
        let grad = h * &x + g;
        let mut worst = None;
        let mut worst_val = 1e-14 * (1.0 + grad.amax());
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => continue,
            };
            if violation > worst_val {
                worst_val = violation;
                worst = Some(i);
            }
        }
        match worst {
            Some(i) => state[i] = Bound::Free,
            None => return Some(x),
        }
    }
    None
}

fn projected_gradient(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = g.len();
    let lmax = h.clone().symmetric_eigen().eigenvalues.max().max(f64::MIN_POSITIVE);
    let step = 1.0 / lmax;
    let mut x = DVector::from_iterator(n, (0..n).map(|i| 0.0f64.clamp(lo[i], hi[i])));
    for _ in 0..200_000 {
        let grad = h * &x + g;
        for i in 0..n {
            x[i] = (x[i] - step * grad[i]).clamp(lo[i], hi[i]);
        }
        if duality_gap(h, g, &x, lo, hi) <= 1e-10 {
            break;
        }
    }
    x
}

/// Minimises `0.5 x'Hx + g'x` over a box. `H` must be positive definite.
pub fn solve_box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lower: &[f64], upper: &[f64]) -> Result<BoxQpSolution> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch("box QP dimensions".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::InvalidParameter("box QP has an empty box".into()));
    }
    let x = match active_set(h, g, lower, upper) {
        Some(x) if duality_gap(h, g, &x, lower, upper) <= 1e-9 => x,
        _ => projected_gradient(h, g, lower, upper),
    };
    let gap = duality_gap(h, g, &x, lower, upper);
    Ok(BoxQpSolution {
        objective: objective(h, g, &x),
        x,
        gap,
    })
}

/// `min s' M^{-1} s` over all `s` with `max_i |s_i| = 1`, with the minimiser.
///
/// For each coordinate `c` the box QP with `s_c = 1` is solved and the smallest
/// value is kept; `s_c = -1` is the same problem by symmetry.
pub fn min_quadratic_on_s(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let k = m.nrows();
    if k == 0 || m.ncols() != k {
        return Err(Error::ShapeMismatch("quadratic form must be square and nonempty".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    if (&sym - m).amax() > 1e-10 * m.amax().max(1.0) {
        return Err(Error::NotSpd);
    }
    let q = sym.cholesky().ok_or(Error::NotSpd)?.inverse();
    let q = (&q + q.transpose()) * 0.5;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for c in 0..k {
        let rest: Vec<usize> = (0..k).filter(|&i| i != c).collect();
        let mut s = DVector::zeros(k);
        s[c] = 1.0;
        if !rest.is_empty() {
            let r = rest.len();
            let h = DMatrix::from_fn(r, r, |a, b| 2.0 * q[(rest[a], rest[b])]);
            let g = DVector::from_fn(r, |a, _| 2.0 * q[(rest[a], c)]);
            let sol = solve_box_qp(&h, &g, &vec![-1.0; r], &vec![1.0; r])?;
            for (a, &i) in rest.iter().enumerate() {
                s[i] = sol.x[a];
            }
        }
        let value = s.dot(&(&q * &s));
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, s));
        }
    }
    Ok(best.expect("at least one coordinate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(k, k) * 0.1
    }

    /// Exact minimum of a 1-D quadratic `a t^2 + b t + c` over `[lo, hi]`.
    fn min_quad_1d(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> f64 {
        let f = |t: f64| a * t * t + b * t + c;
        let mut best = f(lo).min(f(hi));
        if a > 0.0 {
            let t = -b / (2.0 * a);
            if t > lo && t < hi {
                best = best.min(f(t));
            }
        }
        best
    }

    /// Grid search over the boundary of the square, then exact refinement on
    /// the edge segment around the best grid point.
    fn grid_oracle(q: &DMatrix<f64>) -> f64 {
        let h = 2.0 / 400.0;
        let f = |s0: f64, s1: f64| q[(0, 0)] * s0 * s0 + 2.0 * q[(0, 1)] * s0 * s1 + q[(1, 1)] * s1 * s1;
        let mut best = f64::INFINITY;
        let mut arg = (0usize, 0.0f64);
        for i in 0..=400 {
            for j in 0..=400 {
                let (s0, s1) = (-1.0 + i as f64 * h, -1.0 + j as f64 * h);
                if i == 0 || i == 400 || j == 0 || j == 400 {
                    let v = f(s0, s1);
                    if v < best {
                        best = v;
                        arg = if i == 0 || i == 400 { (0, s1) } else { (1, s0) };
                    }
                }
            }
        }
        let (edge, t) = arg;
        let (lo, hi) = ((t - h).max(-1.0), (t + h).min(1.0));
        // fix coordinate `edge` at +-1; the sign does not change the minimum
        let refined = if edge == 0 {
            min_quad_1d(q[(1, 1)], 2.0 * q[(0, 1)], q[(0, 0)], lo, hi)
                .min(min_quad_1d(q[(1, 1)], -2.0 * q[(0, 1)], q[(0, 0)], lo, hi))
        } else {
            min_quad_1d(q[(0, 0)], 2.0 * q[(0, 1)], q[(1, 1)], lo, hi)
                .min(min_quad_1d(q[(0, 0)], -2.0 * q[(0, 1)], q[(1, 1)], lo, hi))
        };
        best.min(refined)
    }

    #[test]
    fn isotropic_case() {
        let m = DMatrix::identity(4, 4) * 2.5;
        let (v, s) = min_quadratic_on_s(&m).unwrap();
        assert!((v - 0.4).abs() < 1e-14);
        assert_eq!(s.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn two_dim_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_spd(2, &mut rng);
            let q = m.clone().try_inverse().unwrap();
            let (v, s) = min_quadratic_on_s(&m).unwrap();
            assert!((v - grid_oracle(&q)).abs() < 1e-6, "{v} vs {}", grid_oracle(&q));
            assert!((s.amax() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn below_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in [3usize, 6] {
            let m = random_spd(k, &mut rng);
            let q = m.clone().try_inverse().unwrap();
            let (v, s) = min_quadratic_on_s(&m).unwrap();
            assert!((s.amax() - 1.0).abs() < 1e-8);
            for _ in 0..500 {
                let mut p = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
                let c = rng.random_range(0..k);
                p[c] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                assert!(v <= p.dot(&(&q * &p)) + 1e-12);
            }
        }
    }

    #[test]
    fn not_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(min_quadratic_on_s(&m).unwrap_err(), Error::NotSpd);
    }

    #[test]
    fn box_qp_active_bounds() {
        // unconstrained minimiser (3, -3) is clipped to (1, -1)
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_column_slice(&[-3.0, 3.0]);
        let sol = solve_box_qp(&h, &g, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(sol.x.as_slice(), &[1.0, -1.0]);
        assert!(sol.gap < 1e-12);
    }

    #[test]
    fn box_qp_matches_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let k = rng.random_range(1..6);
            let h = random_spd(k, &mut rng);
            let g = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
            let (lo, hi) = (vec![-1.0; k], vec![1.0; k]);
            let a = solve_box_qp(&h, &g, &lo, &hi).unwrap();
            let b = projected_gradient(&h, &g, &lo, &hi);
            assert!(a.objective <= objective(&h, &g, &b) + 1e-9);
        }
    }
}

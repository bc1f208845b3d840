//! Randomized incremental linear programming in dimension <= 3.
//!
//! Solves `minimize c.x subject to a_i.x >= b_i, 0 <= x_j <= hi` by
//! Seidel's algorithm: process constraints in random order, and whenever the
//! incoming constraint is violated by the current optimum, re-solve on that
//! constraint's boundary hyperplane — a one-dimension-smaller program over
//! the constraints seen so far. Expected running time is linear in the
//! number of constraints for fixed dimension.
//!
//! The box `[0, hi]^d` exists to keep every sub-program bounded; callers
//! pick `hi` large enough that it can never be active at the true optimum.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::seq::SliceRandom;

/// A half-space `a.x >= b`.
#[derive(Debug, Clone)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        HalfSpace { a, b }
    }

    fn satisfied(&self, x: &[f64]) -> bool {
        let lhs: f64 = self.a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
        let scale: f64 =
            1.0 + self.b.abs() + self.a.iter().zip(x).map(|(ai, xi)| (ai * xi).abs()).sum::<f64>();
        lhs >= self.b - 1e-12 * scale
    }
}

/// Minimizes `c.x` over `{x : a_i.x >= b_i} ∩ [0, hi]^d` for `d = c.len()`
/// (at most 3). Deterministic for a fixed `seed`.
pub fn solve_min(c: &[f64], constraints: &[HalfSpace], hi: f64, seed: u64) -> Result<Vec<f64>> {
    let dim = c.len();
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidArgument(format!(
            "solver supports dimensions 1..=3, got {dim}"
        )));
    }
    if !(hi.is_finite() && hi > 0.0) {
        return Err(Error::InvalidArgument(format!("box bound must be positive, got {hi}")));
    }
    for hs in constraints {
        if hs.a.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: hs.a.len(),
            });
        }
        if hs.a.iter().any(|v| !v.is_finite()) || !hs.b.is_finite() {
            return Err(Error::NonFinite {
                what: "constraint coefficients".into(),
            });
        }
    }
    let mut rng = stream_rng(seed, 0xC0FFEE);
    let mut order: Vec<usize> = (0..constraints.len()).collect();
    order.shuffle(&mut rng);
    let shuffled: Vec<HalfSpace> = order.iter().map(|&i| constraints[i].clone()).collect();
    solve_rec(c, &shuffled, hi)
}

fn solve_rec(c: &[f64], cons: &[HalfSpace], hi: f64) -> Result<Vec<f64>> {
    let dim = c.len();
    if dim == 1 {
        return solve_1d(c[0], cons, hi).map(|x| vec![x]);
    }

    // optimum over the box alone
    let mut x: Vec<f64> = c.iter().map(|&cj| if cj >= 0.0 { 0.0 } else { hi }).collect();

    for (pos, hs) in cons.iter().enumerate() {
        if hs.satisfied(&x) {
            continue;
        }
        // The optimum of the prefix including `hs` lies on `hs`'s boundary.
        let (k, ak) = pivot(&hs.a);
        if ak == 0.0 {
            // 0.x >= b with the point infeasible means b > 0: empty program
            return Err(Error::Infeasible);
        }
        // Parameterize x_k = w0 + sum_{j != k} w_j t_j on the hyperplane.
        let w0 = hs.b / ak;
        let w: Vec<f64> = drop_coord(&hs.a, k).iter().map(|&aj| -aj / ak).collect();

        let mut sub: Vec<HalfSpace> = Vec::with_capacity(pos + 2);
        // box of the eliminated coordinate becomes two general constraints
        sub.push(HalfSpace::new(w.clone(), -w0)); // x_k >= 0
        sub.push(HalfSpace::new(w.iter().map(|v| -v).collect(), w0 - hi)); // x_k <= hi
        for prev in &cons[..pos] {
            let alpha_k = prev.a[k];
            let rest = drop_coord(&prev.a, k);
            let a_new: Vec<f64> = rest
                .iter()
                .zip(&w)
                .map(|(aj, wj)| aj + alpha_k * wj)
                .collect();
            sub.push(HalfSpace::new(a_new, prev.b - alpha_k * w0));
        }
        let c_rest = drop_coord(c, k);
        let c_new: Vec<f64> = c_rest
            .iter()
            .zip(&w)
            .map(|(cj, wj)| cj + c[k] * wj)
            .collect();

        let t = solve_rec(&c_new, &sub, hi)?;
        let xk = w0 + w.iter().zip(&t).map(|(wj, tj)| wj * tj).sum::<f64>();
        x = insert_coord(&t, k, xk);
    }
    Ok(x)
}

fn solve_1d(c: f64, cons: &[HalfSpace], hi: f64) -> Result<f64> {
    let mut lo_b = 0.0f64;
    let mut hi_b = hi;
    for hs in cons {
        let a = hs.a[0];
        let scale = 1.0 + hs.b.abs();
        if a.abs() <= 1e-11 * scale {
            if hs.b > 1e-9 * scale {
                return Err(Error::Infeasible);
            }
            continue;
        }
        let r = hs.b / a;
        if a > 0.0 {
            lo_b = lo_b.max(r);
        } else {
            hi_b = hi_b.min(r);
        }
    }
    if lo_b > hi_b + 1e-9 * (1.0 + lo_b.abs()) {
        return Err(Error::Infeasible);
    }
    let hi_b = hi_b.max(lo_b); // collapse inverted-by-rounding intervals
    Ok(if c >= 0.0 { lo_b } else { hi_b })
}

fn pivot(a: &[f64]) -> (usize, f64) {
    let mut k = 0;
    for (j, v) in a.iter().enumerate() {
        if v.abs() > a[k].abs() {
            k = j;
        }
    }
    (k, a[k])
}

fn drop_coord(v: &[f64], k: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, &x)| x)
        .collect()
}

fn insert_coord(v: &[f64], k: usize, value: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.extend_from_slice(&v[..k]);
    out.push(value);
    out.extend_from_slice(&v[k..]);
    out
}

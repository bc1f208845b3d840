//! Noise budgets and proxy step sizes.
//!
//! Under the affine-variance envelope `(A, B, C)` and smoothness `L`, the
//! stochastic gradient at step `s` is bounded almost surely by
//!
//! ```text
//! ||g_s||^2 <= X * gap_s + 2C,      X = 2A + 4LB + 4L,
//! ```
//!
//! where `gap_s = f(x_s) - f*`. The per-step budget `G_s = sqrt(X gap_s + 2C)`
//! and its trajectory-level version `G = sqrt(X Delta + 2C)` (with `Delta` a
//! high-probability bound on every gap) drive the decoupling argument: the
//! proxy step size `a_s = sqrt(v_{s-1} + G_s^2) + eps` is measurable one step
//! ahead of `b_s` yet stays within `G_s / (a_s b_s)` of it.

use crate::error::{Error, Result};
use crate::oracles::NoiseSpec;
use serde::{Deserialize, Serialize};

/// Almost-sure envelopes use the budgets as is; sub-Gaussian envelopes
/// (noise unbounded but with a certified exponential moment) inflate the
/// squared budgets by `log(eT/delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogMode {
    AlmostSure,
    Subgaussian,
}

impl LogMode {
    /// Multiplier applied inside the square root of each budget.
    pub fn factor(&self, t: usize, delta_prob: f64) -> f64 {
        match self {
            LogMode::AlmostSure => 1.0,
            LogMode::Subgaussian => (std::f64::consts::E * t as f64 / delta_prob).ln(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// `X = 2A + 4LB + 4L`
    pub x_factor: f64,
    /// `G_s` per recorded step
    pub per_step: Vec<f64>,
    /// trajectory-level `G`
    pub global: f64,
    pub log_mode: LogMode,
    /// the multiplier that was applied inside the square roots
    pub log_factor: f64,
}

/// Evaluates the budgets for a recorded gap sequence and a gap bound
/// `delta_bound` (any upper bound on all gaps; budgets are monotone in it).
pub fn compute_noise_budget(
    spec: &NoiseSpec,
    l: f64,
    gaps: &[f64],
    delta_bound: f64,
    t: usize,
    delta_prob: f64,
    mode: LogMode,
) -> Result<NoiseBudget> {
    spec.validate()?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothness L must be positive, got {l}")));
    }
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability margin must lie in (0,1), got {delta_prob}"
        )));
    }
    if !(delta_bound >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gap bound must be >= 0, got {delta_bound}"
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    for (i, &g) in gaps.iter().enumerate() {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gap at step {} must be finite and >= 0, got {g} (bad f*?)",
                i + 1
            )));
        }
    }
    let x_factor = 2.0 * spec.a + 4.0 * l * spec.b + 4.0 * l;
    let lf = mode.factor(t, delta_prob);
    let per_step = gaps
        .iter()
        .map(|&gap| (lf * (x_factor * gap + 2.0 * spec.c)).sqrt())
        .collect();
    let global = (lf * (x_factor * delta_bound + 2.0 * spec.c)).sqrt();
    Ok(NoiseBudget {
        x_factor,
        per_step,
        global,
        log_mode: mode,
        log_factor: lf,
    })
}

/// Coordinate-wise proxy step size `a_s = sqrt(v_{s-1} + G_s^2) + eps`.
pub fn proxy_stepsize(v_prev: &[f64], budget_s: f64, eps: f64) -> Result<Vec<f64>> {
    if !(budget_s >= 0.0 && budget_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("budget must be >= 0, got {budget_s}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if v_prev.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("v entries must be finite and >= 0".into()));
    }
    Ok(v_prev
        .iter()
        .map(|&v| (v + budget_s * budget_s).sqrt() + eps)
        .collect())
}

/// `S(gap) = 4 L1 gap + sqrt(4 L0 gap)`, the generalized-smoothness gradient
/// bound at suboptimality `gap`.
pub fn gen_gradient_bound(l0: f64, l1: f64, gap: f64) -> f64 {
    4.0 * l1 * gap + (4.0 * l0 * gap).sqrt()
}

/// Per-step generalized budgets: the noise budget
/// `H_s = sqrt(2 A gap + 2 (B+1) S(gap)^2 + 2C)` and the local smoothness
/// budget `L_s = 2 L0 + 2 L1 S(gap)`, evaluated elementwise over gaps.
pub fn gen_budgets(
    spec: &NoiseSpec,
    l0: f64,
    l1: f64,
    gaps: &[f64],
    log_factor: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if !(l0 > 0.0 && l1 > 0.0 && l0.is_finite() && l1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "generalized constants must be positive, got ({l0}, {l1})"
        )));
    }
    let mut h = Vec::with_capacity(gaps.len());
    let mut lcal = Vec::with_capacity(gaps.len());
    for (i, &gap) in gaps.iter().enumerate() {
        if !(gap >= 0.0 && gap.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gap at step {} must be finite and >= 0, got {gap}",
                i + 1
            )));
        }
        let s = gen_gradient_bound(l0, l1, gap);
        h.push((log_factor * (2.0 * spec.a * gap + 2.0 * (spec.b + 1.0) * s * s + 2.0 * spec.c)).sqrt());
        lcal.push(2.0 * l0 + 2.0 * l1 * s);
    }
    Ok((h, lcal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: f64, b: f64, c: f64) -> NoiseSpec {
        NoiseSpec::new(a, b, c).unwrap()
    }

    #[test]
    fn budget_formula_spot_check() {
        // A=1, B=1, C=2, L=2: X = 2 + 8 + 8 = 18. gap = 1: G = sqrt(18 + 4).
        let b = compute_noise_budget(&spec(1.0, 1.0, 2.0), 2.0, &[1.0, 0.0], 3.0, 10, 0.05, LogMode::AlmostSure)
            .unwrap();
        assert_eq!(b.x_factor, 18.0);
        assert!((b.per_step[0] - 22f64.sqrt()).abs() < 1e-15);
        assert!((b.per_step[1] - 2.0).abs() < 1e-15); // sqrt(2C) floor
        assert!((b.global - (18.0f64 * 3.0 + 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(b.log_factor, 1.0);
    }

    #[test]
    fn per_step_budgets_never_drop_below_the_constant_floor() {
        let s = spec(3.0, 0.5, 1.25);
        let gaps: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let b = compute_noise_budget(&s, 1.0, &gaps, 5.0, 50, 0.05, LogMode::AlmostSure).unwrap();
        let floor = (2.0 * s.c).sqrt();
        for (i, g) in b.per_step.iter().enumerate() {
            assert!(*g >= floor - 1e-15, "step {i}");
            assert!(*g <= b.global + 1e-15, "step {i}: gap below bound implies budget below global");
        }
    }

    #[test]
    fn subgaussian_mode_inflates_by_log_factor() {
        let s = spec(0.0, 0.0, 1.0);
        let a = compute_noise_budget(&s, 1.0, &[1.0], 1.0, 100, 0.05, LogMode::AlmostSure).unwrap();
        let b = compute_noise_budget(&s, 1.0, &[1.0], 1.0, 100, 0.05, LogMode::Subgaussian).unwrap();
        let lf = (std::f64::consts::E * 100.0 / 0.05).ln();
        assert!((b.log_factor - lf).abs() < 1e-12);
        assert!((b.global - a.global * lf.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn budget_rejects_negative_gaps() {
        let s = spec(1.0, 0.0, 1.0);
        assert!(
            compute_noise_budget(&s, 1.0, &[0.5, -0.1], 1.0, 2, 0.05, LogMode::AlmostSure).is_err()
        );
        assert!(compute_noise_budget(&s, 0.0, &[0.5], 1.0, 1, 0.05, LogMode::AlmostSure).is_err());
        assert!(compute_noise_budget(&s, 1.0, &[0.5], -1.0, 1, 0.05, LogMode::AlmostSure).is_err());
    }

    #[test]
    fn proxy_stepsize_worked_example() {
        // v_prev = 9, G_s = 4, eps = 0.5: a = sqrt(9+16) + 0.5 = 5.5
        let a = proxy_stepsize(&[9.0], 4.0, 0.5).unwrap();
        assert_eq!(a, vec![5.5]);
        assert!(proxy_stepsize(&[-1.0], 1.0, 0.5).is_err());
        assert!(proxy_stepsize(&[1.0], -1.0, 0.5).is_err());
        assert!(proxy_stepsize(&[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn generalized_budgets_are_monotone_in_the_gap() {
        let s = spec(1.0, 0.5, 0.3);
        let gaps = [0.0, 0.5, 1.0, 2.0, 4.0];
        let (h, l) = gen_budgets(&s, 2.0, 0.5, &gaps, 1.0).unwrap();
        for i in 1..gaps.len() {
            assert!(h[i] >= h[i - 1]);
            assert!(l[i] >= l[i - 1]);
        }
        assert!((h[0] - (2.0 * s.c).sqrt()).abs() < 1e-15);
        assert!((l[0] - 4.0).abs() < 1e-15); // 2 L0 at zero gap
    }
}

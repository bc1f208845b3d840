//! High-probability convergence bounds for the momentum method.
//!
//! Two regimes are covered. Under global `L`-smoothness the certificate is
//! built from the polynomial `F_T` (a deterministic over-approximation of the
//! second-moment accumulator `v_T`), the gap bound `Delta`, and the noise
//! budget `G`; the final rate bound reads
//!
//! ```text
//! (1/T) sum_s ||grad f(x_s)||^2
//!     <= 2 D1 [ (D1 (B+1) + G + eps) / T + sqrt(2 (A Delta + C) / T) ],
//! D1 = Delta (1 - beta) / eta.
//! ```
//!
//! Under generalized `(L0, L1)`-smoothness the same architecture goes
//! through with the step size capped by `eta_max` and the gap bounds
//! `Lambda_y` (on the auxiliary sequence) and `Lambda_x` (pulled back to the
//! iterates); the polynomials pick up the constant `C0` from the step-size
//! rule instead of `eta L` products.

use crate::analysis::budget::{gen_budgets, LogMode};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::oracles::NoiseSpec;
use serde::{Deserialize, Serialize};

fn check_common(d: usize, delta_x1: f64, g1_norm: f64, delta_prob: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(delta_x1 >= 0.0 && delta_x1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial gap must be finite and >= 0, got {delta_x1}"
        )));
    }
    if !(g1_norm >= 0.0 && g1_norm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial gradient norm must be finite and >= 0, got {g1_norm}"
        )));
    }
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability margin must lie in (0,1), got {delta_prob}"
        )));
    }
    Ok(())
}

/// `F_T`: deterministic polynomial with `log F_T` controlling every
/// accumulator-dependent sum. Grows like `T^3`, so only its logarithm enters
/// the bounds.
pub fn f_polynomial(
    spec: &NoiseSpec,
    l: f64,
    hyper: &HyperParams,
    d: usize,
    delta_x1: f64,
    g1_norm: f64,
) -> f64 {
    let t = hyper.horizon as f64;
    let df = d as f64;
    let omb = hyper.one_minus_beta();
    let x = 2.0 * spec.a + 4.0 * l * spec.b + 4.0 * l;
    let eta = hyper.eta;
    let lin = (delta_x1 * x + 2.0 * spec.c) * t;
    let quad = (eta * g1_norm * df.sqrt() / omb + l * eta * eta * df / (2.0 * omb * omb)) * x * t * t;
    let cub = l * eta * eta * df * x * t * t * t / (omb * omb);
    1.0 + (lin + quad + cub) / (hyper.epsilon * hyper.epsilon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremBound {
    pub t: usize,
    pub delta_prob: f64,
    pub log_mode: LogMode,
    /// `X = 2A + 4LB + 4L`
    pub x_factor: f64,
    /// `F_T`
    pub f_cal: f64,
    /// high-probability bound on every gap `f(x_s) - f*`
    pub delta_cal: f64,
    /// `Delta (1 - beta) / eta`
    pub delta1: f64,
    /// trajectory-level noise budget at the gap bound
    pub g_budget: f64,
    /// `B + 1`
    pub b1: f64,
    /// bound on the average squared gradient norm over the horizon
    pub rhs: f64,
}

/// Evaluates the smooth-case certificate from the run configuration and the
/// two observables of the starting point (its gap and gradient norm).
pub fn compute_theorem1_bound(
    spec: &NoiseSpec,
    l: f64,
    hyper: &HyperParams,
    d: usize,
    delta_x1: f64,
    g1_norm: f64,
    delta_prob: f64,
    mode: LogMode,
) -> Result<TheoremBound> {
    spec.validate()?;
    hyper.validate()?;
    check_common(d, delta_x1, g1_norm, delta_prob)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothness L must be positive, got {l}")));
    }

    let t = hyper.horizon as f64;
    let df = d as f64;
    let omb = hyper.one_minus_beta();
    let eta = hyper.eta;
    let eps = hyper.epsilon;
    let x = 2.0 * spec.a + 4.0 * l * spec.b + 4.0 * l;
    let f_cal = f_polynomial(spec, l, hyper, d, delta_x1, g1_norm);
    let log_f = f_cal.ln();
    let log_td = (t / delta_prob).ln();
    let sqrt2c = (2.0 * spec.c).sqrt();

    // Smoothness carry-over from the auxiliary sequence back to the iterates.
    let l_tilde = l * eta * eta / (2.0 * omb * omb * omb) + l * eta * eta / (2.0 * omb * omb);
    let delta_cal = 4.0 * delta_x1
        + 12.0 * sqrt2c * eta / omb * log_td
        + 4.0 * (sqrt2c * eta / omb + eta * eta * l / (omb * omb * omb) + l_tilde) * df * log_f
        + 72.0 * x * eta * eta / (omb * omb) * log_td * log_td
        + 8.0 * x * eta * eta / (omb * omb) * df * df * log_f * log_f;

    let lf = mode.factor(hyper.horizon, delta_prob);
    let g_budget = (lf * (x * delta_cal + 2.0 * spec.c)).sqrt();
    let delta1 = delta_cal * omb / eta;
    let b1 = spec.b + 1.0;
    let rhs = 2.0
        * delta1
        * ((delta1 * b1 + g_budget + eps) / t + (2.0 * (spec.a * delta_cal + spec.c) / t).sqrt());

    Ok(TheoremBound {
        t: hyper.horizon,
        delta_prob,
        log_mode: mode,
        x_factor: x,
        f_cal,
        delta_cal,
        delta1,
        g_budget,
        b1,
        rhs,
    })
}

/// `I~_t`: step-size-rule form of the cumulative-gap polynomial, with every
/// `eta * L_j` product replaced by its cap `C0`.
pub fn gen_i_polynomial(c0: f64, hyper: &HyperParams, d: usize, delta_x1: f64, g1_norm: f64, t: usize) -> f64 {
    let tf = t as f64;
    let df = d as f64;
    let omb = hyper.one_minus_beta();
    delta_x1 * tf
        + c0 * df.sqrt() / omb * (g1_norm + c0 * df.sqrt() * tf / omb) * tf * tf
        + c0 * c0 * df / (2.0 * omb * omb) * tf * tf
}

/// `J~_t`: step-size-rule form of the accumulator polynomial.
pub fn gen_j_polynomial(
    spec: &NoiseSpec,
    c0: f64,
    hyper: &HyperParams,
    d: usize,
    delta_x1: f64,
    g1_norm: f64,
    t: usize,
) -> f64 {
    let tf = t as f64;
    let df = d as f64;
    let omb = hyper.one_minus_beta();
    let i_t = gen_i_polynomial(c0, hyper, d, delta_x1, g1_norm, t);
    let gmax = g1_norm + c0 * df.sqrt() * tf / omb;
    1.0 + (2.0 * spec.a * i_t + 2.0 * (spec.b + 1.0) * gmax * gmax * tf + 2.0 * spec.c * tf)
        / (hyper.epsilon * hyper.epsilon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSmoothBound {
    pub t: usize,
    pub delta_prob: f64,
    pub c0: f64,
    /// `J~_T`
    pub j_cal: f64,
    /// gap bound on the auxiliary sequence
    pub lam_y: f64,
    /// gap bound pulled back to the iterates
    pub lam_x: f64,
    /// noise budget at `lam_x`
    pub h_cal: f64,
    /// local-smoothness budget at `lam_x`
    pub l_cal: f64,
    /// largest step size for which the certificate applies
    pub eta_max: f64,
    /// whether the configured step size satisfies the rule
    pub applicable: bool,
    /// `2 lam_y (1 - beta) / eta`
    pub lam_y_tilde: f64,
    pub rhs: f64,
}

/// Evaluates the generalized-smoothness certificate. The step-size rule is
/// self-referential (it involves budgets at `Lambda_x`, which the rule itself
/// controls), so the returned `eta_max` is the fixed-point-free evaluation at
/// the reported `Lambda_x`; `applicable` compares the configured step size
/// against it.
pub fn compute_theorem2_bound(
    spec: &NoiseSpec,
    l0: f64,
    l1: f64,
    hyper: &HyperParams,
    d: usize,
    delta_x1: f64,
    g1_norm: f64,
    c0: f64,
    delta_prob: f64,
) -> Result<GenSmoothBound> {
    spec.validate()?;
    hyper.validate()?;
    check_common(d, delta_x1, g1_norm, delta_prob)?;
    if !(l0 > 0.0 && l1 > 0.0 && l0.is_finite() && l1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "generalized constants must be positive, got ({l0}, {l1})"
        )));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::InvalidArgument(format!("C0 must be positive, got {c0}")));
    }

    let t = hyper.horizon;
    let tf = t as f64;
    let df = d as f64;
    let omb = hyper.one_minus_beta();
    let eta = hyper.eta;
    let eps = hyper.epsilon;

    let j_cal = gen_j_polynomial(spec, c0, hyper, d, delta_x1, g1_norm, t);
    let log_j = j_cal.ln();
    let log_td = (tf / delta_prob).ln();

    let lam_y = delta_x1
        + 3.0 * c0 / omb * log_td
        + c0 * df / omb * log_j
        + c0 * c0 * df / (2.0 * omb * omb * omb) * log_j
        + (c0 * c0 * df / (2.0 * omb * omb * omb) + c0 * c0 * df / (2.0 * omb * omb)) * log_j;
    let lam_x = (2.0 * l0 + 1.0) * lam_y
        + 8.0 * l1 * lam_y * lam_y
        + c0 * c0 * df / (omb * omb) * log_j;

    let (h, lc) = gen_budgets(spec, l0, l1, &[lam_x], 1.0)?;
    let (h_cal, l_cal) = (h[0], lc[0]);
    let eta_max = [c0, c0 / h_cal, c0 / l_cal, omb * omb / (l1 * df.sqrt())]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let applicable = eta <= eta_max;

    let lam_y_tilde = 2.0 * lam_y * omb / eta;
    let rhs = 2.0
        * lam_y_tilde
        * ((lam_y_tilde * (spec.b + 1.0) + h_cal + eps) / tf
            + (2.0 * (spec.a * lam_x + spec.c) / tf).sqrt());

    Ok(GenSmoothBound {
        t,
        delta_prob,
        c0,
        j_cal,
        lam_y,
        lam_x,
        h_cal,
        l_cal,
        eta_max,
        applicable,
        lam_y_tilde,
        rhs,
    })
}

/// Per-run summary tying the empirical trajectory to whichever certificates
/// were evaluated for it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub avg_grad_sq: f64,
    pub min_grad_sq: f64,
    pub max_gap: f64,
    pub theorem1: Option<TheoremBound>,
    pub theorem2: Option<GenSmoothBound>,
    /// every recorded gap stayed below the certified `Delta`
    pub delta_event: Option<bool>,
    /// the average squared gradient stayed below the certified rate bound
    pub rhs_event: Option<bool>,
}

impl BoundReport {
    /// Conjunction of the two high-probability events (true only when both
    /// were evaluated and held).
    pub fn hp_event(&self) -> Option<bool> {
        match (self.delta_event, self.rhs_event) {
            (Some(a), Some(b)) => Some(a && b),
            _ => None,
        }
    }
}

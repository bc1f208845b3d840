//! Trajectory records and the auxiliary averaged sequence.

use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::optim::Method;
use serde::{Deserialize, Serialize};

/// Everything the update touched at one step `s`: the iterate `x_s` *before*
/// the step, the stochastic gradient `g_s`, the true gradient and objective
/// value at `x_s`, and the post-step accumulators `v_s`, `m_s` and the
/// denominator `b_s = sqrt(v_s) + epsilon` actually used by the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub grad: Vec<f64>,
    pub f: f64,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    pub b: Vec<f64>,
}

/// Full per-step record of one run. Suitable for desk-scale horizons; long
/// runs should use [`ScalarTrace`] instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub problem_id: String,
    pub oracle_id: String,
    pub method: Method,
    pub hyper: HyperParams,
    pub seed: u64,
    pub steps: Vec<StepEntry>,
    pub final_x: Vec<f64>,
    pub final_f: f64,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
}

impl TrajectoryRecord {
    pub fn dim(&self) -> usize {
        self.final_x.len()
    }

    /// Average of `||grad f(x_s)||^2` over the recorded steps.
    pub fn avg_grad_sq(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        let sum: f64 = self.steps.iter().map(|e| norm_sq(&e.grad)).sum();
        sum / self.steps.len() as f64
    }

    pub fn min_grad_sq(&self) -> f64 {
        self.steps
            .iter()
            .map(|e| norm_sq(&e.grad))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Scalar summary of one step, for runs too long to keep full vectors.
///
/// `f_y` is the objective at the auxiliary iterate `y_s`, `gb_ratio_sq` is
/// `||g_s / b_s||^2`, `xi_norm_sq` the squared noise norm `||g_s - grad||^2`.
/// Fields that a method does not define (for example `gb_ratio_sq` under
/// plain SGD) are recorded as zero and must not be consumed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStep {
    pub f: f64,
    pub f_y: f64,
    pub grad_norm_sq: f64,
    pub g_norm_sq: f64,
    pub xi_norm_sq: f64,
    pub m_norm: f64,
    pub gb_ratio_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrace {
    pub problem_id: String,
    pub oracle_id: String,
    pub method: Method,
    pub hyper: HyperParams,
    pub seed: u64,
    pub steps: Vec<ScalarStep>,
    pub final_f: f64,
    pub final_grad_norm_sq: f64,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
}

impl ScalarTrace {
    pub fn avg_grad_sq(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|e| e.grad_norm_sq).sum::<f64>() / self.steps.len() as f64
    }

    pub fn min_grad_sq(&self) -> f64 {
        self.steps
            .iter()
            .map(|e| e.grad_norm_sq)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The auxiliary sequence together with the largest identity residual seen
/// while validating it.
#[derive(Debug, Clone)]
pub struct YSequence {
    /// `y_1 ..= y_{T+1}`, so `ys.len() == steps.len() + 1`.
    pub ys: Vec<Vec<f64>>,
    pub max_residual: f64,
}

/// Builds the averaged sequence `y_s = x_s + beta/(1-beta) * (x_s - x_{s-1})`
/// (with `y_1 = x_1`) and validates the one-step identity
/// `y_{s+1} = y_s - eta/(1-beta) * g_s / b_s` coordinate-wise.
///
/// A residual above `tol` (1e-10 by default via [`derive_y_sequence`])
/// indicates an internally inconsistent record and is returned as an error.
pub fn derive_y_sequence_with_tol(record: &TrajectoryRecord, tol: f64) -> Result<YSequence> {
    if record.steps.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if record.method == Method::Sgd {
        return Err(Error::InvalidArgument(
            "auxiliary sequence is defined for adaptive records only".into(),
        ));
    }
    let d = record.dim();
    let beta = record.hyper.beta;
    let ratio = beta / (1.0 - beta);
    let t = record.steps.len();

    let x_at = |s: usize| -> &[f64] {
        // s is 1-based; x_{T+1} is the final iterate.
        if s <= t {
            &record.steps[s - 1].x
        } else {
            &record.final_x
        }
    };

    let mut ys = Vec::with_capacity(t + 1);
    ys.push(record.steps[0].x.clone()); // y_1 = x_1
    for s in 2..=t + 1 {
        let xs = x_at(s);
        let xp = x_at(s - 1);
        let y: Vec<f64> = (0..d).map(|i| xs[i] + ratio * (xs[i] - xp[i])).collect();
        ys.push(y);
    }

    let scale = record.hyper.eta / (1.0 - beta);
    let mut max_residual = 0.0f64;
    let mut worst_step = 1;
    for s in 1..=t {
        let e = &record.steps[s - 1];
        for i in 0..d {
            let b = coord(&e.b, i);
            let pred = ys[s - 1][i] - scale * e.g[i] / b;
            let r = (ys[s][i] - pred).abs();
            if r > max_residual {
                max_residual = r;
                worst_step = s;
            }
        }
    }
    if max_residual > tol {
        return Err(Error::YResidual {
            step: worst_step,
            residual: max_residual,
            tol,
        });
    }
    Ok(YSequence { ys, max_residual })
}

/// [`derive_y_sequence_with_tol`] at the standard tolerance 1e-10.
pub fn derive_y_sequence(record: &TrajectoryRecord) -> Result<YSequence> {
    derive_y_sequence_with_tol(record, 1e-10)
}

/// Reads coordinate `i` from a vector that may be stored per-coordinate or
/// as a single scalar broadcast over all coordinates.
pub fn coord(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    norm_sq(x).sqrt()
}

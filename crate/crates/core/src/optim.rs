//! Step rules and trajectory runners.
//!
//! The primary update is AdaGrad with heavy-ball momentum, in the
//! accumulator form
//!
//! ```text
//! v_s = v_{s-1} + g_s .* g_s
//! m_s = beta * m_{s-1} - eta * g_s ./ (sqrt(v_s) + eps)
//! x_{s+1} = x_s + m_s,            m_0 = v_0 = 0
//! ```
//!
//! with the denominator shift added *outside* the square root. The same
//! iterates admit a two-term heavy-ball recursion (see
//! [`heavy_ball_trajectory`]); the two forms are implemented independently
//! and their coordinate-wise agreement is part of the acceptance gate.

use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::oracles::Oracle;
use crate::problems::Problem;
use crate::rng::stream_rng;
use crate::trajectory::{norm, norm_sq, ScalarStep, ScalarTrace, StepEntry, TrajectoryRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// AdaGrad with heavy-ball momentum (the primary update).
    #[serde(rename = "adagrad-m")]
    AdaGradM,
    /// Coordinate-wise AdaGrad; identical to `AdaGradM` with `beta = 0`.
    #[serde(rename = "adagrad")]
    AdaGrad,
    /// Scalar-accumulator variant: `v_s = v_{s-1} + ||g_s||^2`.
    #[serde(rename = "adagrad-norm")]
    AdaGradNorm,
    /// Constant-step SGD baseline, `x_{s+1} = x_s - eta * g_s`.
    #[serde(rename = "sgd")]
    Sgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::AdaGradM => "adagrad-m",
            Method::AdaGrad => "adagrad",
            Method::AdaGradNorm => "adagrad-norm",
            Method::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "adagrad-m" => Ok(Method::AdaGradM),
            "adagrad" => Ok(Method::AdaGrad),
            "adagrad-norm" => Ok(Method::AdaGradNorm),
            "sgd" => Ok(Method::Sgd),
            _ => Err(Error::UnknownId(format!("method `{s}`"))),
        }
    }

    /// Methods whose records the per-lemma invariant checks apply to.
    pub fn is_coordinate_adaptive(&self) -> bool {
        matches!(self, Method::AdaGradM | Method::AdaGrad)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mutable optimizer state between steps. `v` has length `d` for the
/// coordinate-wise methods, length 1 for the scalar-accumulator variant and
/// length 0 for SGD; `step` counts completed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    pub step: usize,
}

impl OptimizerState {
    pub fn init(method: Method, x1: Vec<f64>) -> Self {
        let d = x1.len();
        let (v, m) = match method {
            Method::AdaGradM | Method::AdaGrad => (vec![0.0; d], vec![0.0; d]),
            Method::AdaGradNorm => (vec![0.0; 1], vec![0.0; d]),
            Method::Sgd => (Vec::new(), Vec::new()),
        };
        OptimizerState {
            x: x1,
            v,
            m,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

fn check_gradient(state: &OptimizerState, g: &[f64]) -> Result<()> {
    if g.len() != state.x.len() {
        return Err(Error::DimensionMismatch {
            expected: state.x.len(),
            got: g.len(),
        });
    }
    if g.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite {
            what: "stochastic gradient".into(),
        });
    }
    Ok(())
}

/// One momentum-AdaGrad step. Returns the advanced state together with the
/// denominator `b_s` that was applied (needed by the record and by the
/// auxiliary-sequence identity).
pub fn adagrad_momentum_step(
    state: &OptimizerState,
    g: &[f64],
    hyper: &HyperParams,
) -> Result<(OptimizerState, Vec<f64>)> {
    check_gradient(state, g)?;
    if state.v.len() != state.x.len() || state.m.len() != state.x.len() {
        return Err(Error::InvalidArgument(
            "state not initialised for a coordinate-wise method".into(),
        ));
    }
    let d = state.dim();
    let mut v = state.v.clone();
    let mut m = state.m.clone();
    let mut x = state.x.clone();
    let mut b = vec![0.0; d];
    for i in 0..d {
        v[i] += g[i] * g[i];
        b[i] = v[i].sqrt() + hyper.epsilon;
        m[i] = hyper.beta * m[i] - hyper.eta * g[i] / b[i];
        x[i] += m[i];
    }
    Ok((
        OptimizerState {
            x,
            v,
            m,
            step: state.step + 1,
        },
        b,
    ))
}

/// Scalar-accumulator variant: a single `v_s = v_{s-1} + ||g_s||^2` feeds
/// every coordinate; momentum folds in exactly as in the coordinate rule.
pub fn adagrad_norm_step(
    state: &OptimizerState,
    g: &[f64],
    hyper: &HyperParams,
) -> Result<(OptimizerState, Vec<f64>)> {
    check_gradient(state, g)?;
    if state.v.len() != 1 || state.m.len() != state.x.len() {
        return Err(Error::InvalidArgument(
            "state not initialised for the scalar-accumulator method".into(),
        ));
    }
    let d = state.dim();
    let v_new = state.v[0] + norm_sq(g);
    let b = v_new.sqrt() + hyper.epsilon;
    let mut m = state.m.clone();
    let mut x = state.x.clone();
    for i in 0..d {
        m[i] = hyper.beta * m[i] - hyper.eta * g[i] / b;
        x[i] += m[i];
    }
    Ok((
        OptimizerState {
            x,
            v: vec![v_new],
            m,
            step: state.step + 1,
        },
        vec![b],
    ))
}

/// Constant-step SGD baseline.
pub fn sgd_step(state: &OptimizerState, g: &[f64], lr: f64) -> Result<OptimizerState> {
    check_gradient(state, g)?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidHyper(format!("sgd step size must be positive, got {lr}")));
    }
    let x = state
        .x
        .iter()
        .zip(g)
        .map(|(xi, gi)| xi - lr * gi)
        .collect();
    Ok(OptimizerState {
        x,
        v: state.v.clone(),
        m: state.m.clone(),
        step: state.step + 1,
    })
}

/// Replays a fixed gradient sequence through the *two-term* heavy-ball
/// recursion
///
/// ```text
/// x_{s+1} = x_s - eta * g_s ./ (sqrt(v_s) + eps) + beta * (x_s - x_{s-1})
/// ```
///
/// with `x_0 = x_1`. Returns `x_1 ..= x_{T+1}`. This is a deliberately
/// independent implementation of the same iterates as
/// [`adagrad_momentum_step`]; no momentum buffer is kept.
pub fn heavy_ball_trajectory(x1: &[f64], gs: &[Vec<f64>], hyper: &HyperParams) -> Vec<Vec<f64>> {
    let d = x1.len();
    let mut xs = Vec::with_capacity(gs.len() + 1);
    xs.push(x1.to_vec());
    let mut v = vec![0.0; d];
    let mut x_prev = x1.to_vec();
    let mut x = x1.to_vec();
    for g in gs {
        let mut x_next = vec![0.0; d];
        for i in 0..d {
            v[i] += g[i] * g[i];
            let b = v[i].sqrt() + hyper.epsilon;
            x_next[i] = x[i] - hyper.eta * g[i] / b + hyper.beta * (x[i] - x_prev[i]);
        }
        x_prev = x;
        x = x_next;
        xs.push(x.clone());
    }
    xs
}

fn validate_run(
    problem: &Problem,
    method: Method,
    hyper: &HyperParams,
    x1: &[f64],
) -> Result<()> {
    hyper.validate()?;
    if x1.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x1.len(),
        });
    }
    if x1.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial iterate".into(),
        });
    }
    if matches!(method, Method::AdaGrad | Method::Sgd) && hyper.beta != 0.0 {
        return Err(Error::InvalidHyper(format!(
            "method `{method}` requires beta = 0, got {}",
            hyper.beta
        )));
    }
    Ok(())
}

fn advance(
    state: &OptimizerState,
    method: Method,
    g: &[f64],
    hyper: &HyperParams,
) -> Result<(OptimizerState, Vec<f64>)> {
    match method {
        Method::AdaGradM | Method::AdaGrad => adagrad_momentum_step(state, g, hyper),
        Method::AdaGradNorm => adagrad_norm_step(state, g, hyper),
        Method::Sgd => Ok((sgd_step(state, g, hyper.eta)?, Vec::new())),
    }
}

/// Runs `hyper.horizon` stochastic steps from `x1` and records everything.
///
/// The run is fully determined by `(problem, oracle, method, hyper, x1,
/// seed)`; the oracle draws from stream 0 of the ChaCha key `seed`. If a
/// non-finite objective value or gradient is encountered the record is
/// truncated at that step and flagged as diverged instead of erroring, so
/// sweeps can report partial rows.
pub fn run_trajectory(
    problem: &Problem,
    oracle: &Oracle,
    method: Method,
    hyper: &HyperParams,
    x1: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    validate_run(problem, method, hyper, x1)?;
    oracle.validate_for(problem)?;
    let mut rng = stream_rng(seed, 0);
    let mut state = OptimizerState::init(method, x1.to_vec());
    let mut steps: Vec<StepEntry> = Vec::with_capacity(hyper.horizon);
    let mut diverged = false;
    let mut divergence_step = None;

    for s in 1..=hyper.horizon {
        let f = problem.value(&state.x);
        let grad = problem.gradient(&state.x);
        if !f.is_finite() || grad.iter().any(|a| !a.is_finite()) {
            diverged = true;
            divergence_step = Some(s);
            break;
        }
        let g = oracle.draw(problem, &state.x, &grad, f, &mut rng)?;
        if g.iter().any(|a| !a.is_finite()) {
            diverged = true;
            divergence_step = Some(s);
            break;
        }
        let x_s = state.x.clone();
        let (next, b) = advance(&state, method, &g, hyper)?;
        steps.push(StepEntry {
            x: x_s,
            g,
            grad,
            f,
            v: next.v.clone(),
            m: next.m.clone(),
            b,
        });
        state = next;
    }

    let final_f = problem.value(&state.x);
    if !diverged && !final_f.is_finite() {
        diverged = true;
        divergence_step = Some(hyper.horizon + 1);
    }
    Ok(TrajectoryRecord {
        problem_id: problem.id().to_string(),
        oracle_id: oracle.id(),
        method,
        hyper: *hyper,
        seed,
        steps,
        final_x: state.x,
        final_f,
        diverged,
        divergence_step,
    })
}

/// Streaming variant of [`run_trajectory`] for horizons where keeping full
/// vectors per step is not affordable. Records per-step scalars only (see
/// [`ScalarStep`]); the iterates themselves are discarded as the run moves
/// on. Bitwise identical to the full runner in its x-sequence because the
/// update code path is the same.
pub fn run_trajectory_scalars(
    problem: &Problem,
    oracle: &Oracle,
    method: Method,
    hyper: &HyperParams,
    x1: &[f64],
    seed: u64,
) -> Result<ScalarTrace> {
    validate_run(problem, method, hyper, x1)?;
    oracle.validate_for(problem)?;
    let mut rng = stream_rng(seed, 0);
    let mut state = OptimizerState::init(method, x1.to_vec());
    let mut steps: Vec<ScalarStep> = Vec::with_capacity(hyper.horizon.min(1 << 22));
    let mut diverged = false;
    let mut divergence_step = None;
    let beta_ratio = hyper.beta / (1.0 - hyper.beta);

    for s in 1..=hyper.horizon {
        let f = problem.value(&state.x);
        let grad = problem.gradient(&state.x);
        if !f.is_finite() || grad.iter().any(|a| !a.is_finite()) {
            diverged = true;
            divergence_step = Some(s);
            break;
        }
        let g = oracle.draw(problem, &state.x, &grad, f, &mut rng)?;
        if g.iter().any(|a| !a.is_finite()) {
            diverged = true;
            divergence_step = Some(s);
            break;
        }
        // y_s = x_s + beta/(1-beta) * m_{s-1}; defined for the adaptive rules.
        let f_y = if method.is_coordinate_adaptive() && hyper.beta > 0.0 {
            let y: Vec<f64> = state
                .x
                .iter()
                .zip(&state.m)
                .map(|(xi, mi)| xi + beta_ratio * mi)
                .collect();
            problem.value(&y)
        } else {
            f
        };
        let xi_norm_sq = g
            .iter()
            .zip(&grad)
            .map(|(gi, bi)| (gi - bi) * (gi - bi))
            .sum();
        let (next, b) = advance(&state, method, &g, hyper)?;
        let gb_ratio_sq = if b.is_empty() {
            0.0
        } else if b.len() == 1 {
            norm_sq(&g) / (b[0] * b[0])
        } else {
            g.iter().zip(&b).map(|(gi, bi)| (gi / bi) * (gi / bi)).sum()
        };
        steps.push(ScalarStep {
            f,
            f_y,
            grad_norm_sq: norm_sq(&grad),
            g_norm_sq: norm_sq(&g),
            xi_norm_sq,
            m_norm: norm(&next.m),
            gb_ratio_sq,
        });
        state = next;
    }

    let final_f = problem.value(&state.x);
    let final_grad_norm_sq = norm_sq(&problem.gradient(&state.x));
    if !diverged && !final_f.is_finite() {
        diverged = true;
        divergence_step = Some(hyper.horizon + 1);
    }
    Ok(ScalarTrace {
        problem_id: problem.id().to_string(),
        oracle_id: oracle.id(),
        method,
        hyper: *hyper,
        seed,
        steps,
        final_f,
        final_grad_norm_sq,
        diverged,
        divergence_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Problem;

    fn hp(eta: f64, beta: f64, eps: f64, t: usize) -> HyperParams {
        HyperParams::new(eta, beta, eps, t).unwrap()
    }

    // Worked single step: x = (0,0), g = (3,4), eta = 1, eps = 1, beta = 0.
    // v' = (9,16); denominators (sqrt(9)+1, sqrt(16)+1) = (4,5);
    // x' = (-3/4, -4/5). Frozen by hand before the implementation existed.
    #[test]
    fn single_step_worked_example() {
        let state = OptimizerState::init(Method::AdaGrad, vec![0.0, 0.0]);
        let (next, b) = adagrad_momentum_step(&state, &[3.0, 4.0], &hp(1.0, 0.0, 1.0, 1)).unwrap();
        assert_eq!(next.v, vec![9.0, 16.0]);
        assert_eq!(b, vec![4.0, 5.0]);
        assert_eq!(next.m, vec![-0.75, -0.8]);
        assert_eq!(next.x, vec![-0.75, -0.8]);
        assert_eq!(next.step, 1);
    }

    // Same inputs through the scalar-accumulator rule with eps = 0:
    // v' = 25, b = 5, x' = (-3/5, -4/5) scaled by eta=1 -> (-0.6, -0.8).
    #[test]
    fn norm_variant_worked_example() {
        let state = OptimizerState::init(Method::AdaGradNorm, vec![0.0, 0.0]);
        let hyper = HyperParams {
            eta: 1.0,
            beta: 0.0,
            epsilon: 1e-300, // effectively zero; zero itself is rejected
            horizon: 1,
        };
        let (next, b) = adagrad_norm_step(&state, &[3.0, 4.0], &hyper).unwrap();
        assert_eq!(next.v, vec![25.0]);
        assert!((b[0] - 5.0).abs() < 1e-12);
        assert!((next.x[0] + 0.6).abs() < 1e-12);
        assert!((next.x[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        let hyper = hp(0.5, 0.9, 1e-8, 2);
        let state = OptimizerState::init(Method::AdaGradM, vec![1.0]);
        let (s1, _) = adagrad_momentum_step(&state, &[2.0], &hyper).unwrap();
        // v=4, b=2+eps, m = -0.5*2/b ~ -0.5, x ~ 0.5
        assert!((s1.m[0] + 0.5).abs() < 1e-7);
        let (s2, _) = adagrad_momentum_step(&s1, &[0.0], &hyper).unwrap();
        // zero gradient: m carries over scaled by beta
        assert!((s2.m[0] - 0.9 * s1.m[0]).abs() < 1e-12);
        assert!((s2.x[0] - (s1.x[0] + s2.m[0])).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_still_moves_under_momentum_only() {
        // With m = 0 and g = 0 the iterate must not move and v stays 0.
        let hyper = hp(0.5, 0.9, 1e-8, 1);
        let state = OptimizerState::init(Method::AdaGradM, vec![1.0, -2.0]);
        let (next, _) = adagrad_momentum_step(&state, &[0.0, 0.0], &hyper).unwrap();
        assert_eq!(next.x, vec![1.0, -2.0]);
        assert_eq!(next.v, vec![0.0, 0.0]);
    }

    #[test]
    fn step_rejects_bad_gradients() {
        let hyper = hp(1.0, 0.0, 1.0, 1);
        let state = OptimizerState::init(Method::AdaGrad, vec![0.0, 0.0]);
        assert!(adagrad_momentum_step(&state, &[1.0], &hyper).is_err());
        assert!(adagrad_momentum_step(&state, &[1.0, f64::NAN], &hyper).is_err());
        assert!(adagrad_momentum_step(&state, &[1.0, f64::INFINITY], &hyper).is_err());
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let state = OptimizerState::init(Method::Sgd, vec![1.0, 2.0]);
        let next = sgd_step(&state, &[10.0, -10.0], 0.1).unwrap();
        assert_eq!(next.x, vec![0.0, 3.0]);
        assert!(sgd_step(&state, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn dimension_one_norm_and_coordinate_rules_agree() {
        let hyper = hp(0.7, 0.6, 1e-3, 1);
        let mut sc = OptimizerState::init(Method::AdaGradM, vec![2.0]);
        let mut sn = OptimizerState::init(Method::AdaGradNorm, vec![2.0]);
        for g in [[1.5], [-0.3], [0.9]] {
            let (c, _) = adagrad_momentum_step(&sc, &g, &hyper).unwrap();
            let (n, _) = adagrad_norm_step(&sn, &g, &hyper).unwrap();
            assert!((c.x[0] - n.x[0]).abs() < 1e-15);
            sc = c;
            sn = n;
        }
    }

    #[test]
    fn runner_produces_exact_horizon_and_is_reproducible() {
        let problem = Problem::quadratic(4, 2.0);
        let oracle = Oracle::gaussian(0.5);
        let hyper = hp(0.5, 0.9, 1e-6, 50);
        let x1 = vec![1.0; 4];
        let r1 = run_trajectory(&problem, &oracle, Method::AdaGradM, &hyper, &x1, 3).unwrap();
        let r2 = run_trajectory(&problem, &oracle, Method::AdaGradM, &hyper, &x1, 3).unwrap();
        assert_eq!(r1.steps.len(), 50);
        assert!(!r1.diverged);
        assert_eq!(r1, r2);
        let r3 = run_trajectory(&problem, &oracle, Method::AdaGradM, &hyper, &x1, 4).unwrap();
        assert_ne!(r1.steps[0].g, r3.steps[0].g);
    }

    #[test]
    fn runner_descends_on_noiseless_quadratic() {
        let problem = Problem::quadratic(10, 2.0);
        let hyper = hp(0.5, 0.0, 1.0, 1000);
        let x1 = vec![1.0; 10];
        let rec =
            run_trajectory(&problem, &Oracle::exact(), Method::AdaGrad, &hyper, &x1, 0).unwrap();
        assert!(rec.final_f < rec.steps[0].f);
        assert!(rec.final_f < 1e-6, "final f = {}", rec.final_f);
    }

    #[test]
    fn runner_flags_divergence_instead_of_erroring() {
        // Huge SGD step on a quadratic doubles the iterate each step until
        // the objective overflows; the record must be truncated and flagged.
        let problem = Problem::quadratic(2, 2.0);
        let hyper = hp(1e300, 0.0, 1e-8, 200);
        let rec = run_trajectory(
            &problem,
            &Oracle::exact(),
            Method::Sgd,
            &hyper,
            &[1.0, 1.0],
            0,
        )
        .unwrap();
        assert!(rec.diverged);
        assert!(rec.divergence_step.is_some());
        assert!(rec.steps.len() < 200);
    }

    #[test]
    fn scalar_trace_matches_full_record() {
        let problem = Problem::quadratic(3, 1.0);
        let oracle = Oracle::gaussian(1.0);
        let hyper = hp(0.3, 0.9, 1e-4, 40);
        let x1 = vec![2.0; 3];
        let full = run_trajectory(&problem, &oracle, Method::AdaGradM, &hyper, &x1, 11).unwrap();
        let slim =
            run_trajectory_scalars(&problem, &oracle, Method::AdaGradM, &hyper, &x1, 11).unwrap();
        assert_eq!(slim.steps.len(), full.steps.len());
        assert_eq!(slim.final_f, full.final_f);
        for (a, b) in slim.steps.iter().zip(&full.steps) {
            assert_eq!(a.f, b.f);
            assert_eq!(a.grad_norm_sq, norm_sq(&b.grad));
            assert_eq!(a.m_norm, norm(&b.m));
        }
    }

    #[test]
    fn method_ids_round_trip() {
        for m in [
            Method::AdaGradM,
            Method::AdaGrad,
            Method::AdaGradNorm,
            Method::Sgd,
        ] {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::parse("adam").is_err());
    }

    #[test]
    fn adagrad_method_requires_zero_beta() {
        let problem = Problem::quadratic(2, 1.0);
        let hyper = hp(0.1, 0.5, 1e-8, 5);
        let err = run_trajectory(
            &problem,
            &Oracle::exact(),
            Method::AdaGrad,
            &hyper,
            &[1.0, 1.0],
            0,
        );
        assert!(err.is_err());
    }
}

//! Stochastic gradient oracles and noise-envelope estimation.
//!
//! The noise model of interest is the relaxed affine-variance envelope: the
//! oracle error at `x` satisfies
//!
//! ```text
//! ||g - grad f(x)||^2 <= A (f(x) - f*) + B ||grad f(x)||^2 + C
//! ```
//!
//! almost surely (or with the right-hand side inflated by `log(eT/delta)`
//! in the sub-Gaussian regime, see [`crate::analysis::budget::LogMode`]).
//! [`estimate_noise_params`] fits the smallest such envelope to observed
//! `(gap, grad_sq, noise_sq)` samples by linear programming.

use crate::error::{Error, Result};
use crate::lp::{solve_min, HalfSpace};
use crate::problems::{parse_f64, parse_kv_list, parse_usize, Problem};
use crate::trajectory::{norm_sq, ScalarTrace, TrajectoryRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Coefficients `(A, B, C)` of an affine-variance noise envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NoiseSpec {
    pub fn new(a: f64, b: f64, c: f64) -> Result<NoiseSpec> {
        let spec = NoiseSpec { a, b, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("A", self.a), ("B", self.b), ("C", self.c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "noise coefficient {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Envelope value `A*gap + B*grad_sq + C` at one point.
    pub fn envelope(&self, gap: f64, grad_sq: f64) -> f64 {
        self.a * gap + self.b * grad_sq + self.c
    }

    /// A bounded-variance spec (`A = B = 0`) whose constant certifies the
    /// sub-Gaussian moment condition `E exp(||xi||^2 / C) <= e` for the
    /// isotropic Gaussian oracle with total variance `sigma2` in dimension
    /// `d`: `C = 2 sigma2 / (d (1 - e^{-2/d}))`.
    pub fn subgaussian_for_gaussian(sigma2: f64, d: usize) -> NoiseSpec {
        let d = d as f64;
        NoiseSpec {
            a: 0.0,
            b: 0.0,
            c: 2.0 * sigma2 / (d * (1.0 - (-2.0 / d).exp())),
        }
    }
}

/// One observation for the envelope fit:
/// `gap = f(x) - f*`, `grad_sq = ||grad f(x)||^2`, `noise_sq = ||g - grad f(x)||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub gap: f64,
    pub grad_sq: f64,
    pub noise_sq: f64,
}

/// Result of the envelope fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// weights of the fit objective `w_a A + w_b B + w_c C`
    pub weights: [f64; 3],
    /// largest `noise_sq / envelope` over the samples; <= 1 up to rounding
    pub max_ratio: f64,
    pub n_samples: usize,
}

impl NoiseFit {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            a: self.a,
            b: self.b,
            c: self.c,
        }
    }
}

/// Stochastic gradient oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// Noiseless: returns the true gradient.
    Exact,
    /// Isotropic Gaussian perturbation with total variance `sigma2`
    /// (per-coordinate variance `sigma2 / d`).
    Gaussian { sigma2: f64 },
    /// Synthetic noise saturating a given affine-variance envelope almost
    /// surely: `g = grad + sigma(x) * r * eps` with `r ~ U[0,1]`, `eps`
    /// a uniform sign vector scaled to unit norm, and
    /// `sigma(x)^2 = A (f - f*) + B ||grad||^2 + C`.
    SyntheticA3 { spec: NoiseSpec },
    /// Uniform minibatch without replacement over a finite-sum objective.
    Minibatch { batch: usize },
}

impl Oracle {
    pub fn exact() -> Oracle {
        Oracle::Exact
    }

    pub fn gaussian(sigma2: f64) -> Oracle {
        assert!(sigma2 >= 0.0 && sigma2.is_finite());
        Oracle::Gaussian { sigma2 }
    }

    pub fn synthetic_a3(spec: NoiseSpec) -> Oracle {
        Oracle::SyntheticA3 { spec }
    }

    pub fn minibatch(batch: usize) -> Oracle {
        assert!(batch >= 1);
        Oracle::Minibatch { batch }
    }

    pub fn id(&self) -> String {
        match self {
            Oracle::Exact => "exact".to_string(),
            Oracle::Gaussian { sigma2 } => format!("gaussian:sigma2={sigma2}"),
            Oracle::SyntheticA3 { spec } => {
                format!("synthetic-a3:A={},B={},C={}", spec.a, spec.b, spec.c)
            }
            Oracle::Minibatch { batch } => format!("minibatch:batch={batch}"),
        }
    }

    /// Parses the string form produced by [`Oracle::id`].
    pub fn parse(id: &str) -> Result<Oracle> {
        let (name, params) = match id.split_once(':') {
            Some((n, p)) => (n, p),
            None => (id, ""),
        };
        let kvs = parse_kv_list(id, params)?;
        match name {
            "exact" => {
                if !kvs.is_empty() {
                    return Err(Error::InvalidArgument(format!("{id}: exact takes no parameters")));
                }
                Ok(Oracle::Exact)
            }
            "gaussian" => {
                let mut sigma2 = None;
                for (k, v) in &kvs {
                    match k.as_str() {
                        "sigma2" => sigma2 = Some(parse_f64(id, v)?),
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                let sigma2 =
                    sigma2.ok_or_else(|| Error::InvalidArgument(format!("{id}: missing sigma2")))?;
                if !(sigma2 >= 0.0 && sigma2.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{id}: sigma2 must be >= 0")));
                }
                Ok(Oracle::Gaussian { sigma2 })
            }
            "synthetic-a3" => {
                let (mut a, mut b, mut c) = (None, None, None);
                for (k, v) in &kvs {
                    match k.as_str() {
                        "A" => a = Some(parse_f64(id, v)?),
                        "B" => b = Some(parse_f64(id, v)?),
                        "C" => c = Some(parse_f64(id, v)?),
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                match (a, b, c) {
                    (Some(a), Some(b), Some(c)) => Ok(Oracle::SyntheticA3 {
                        spec: NoiseSpec::new(a, b, c)?,
                    }),
                    _ => Err(Error::InvalidArgument(format!("{id}: need A, B and C"))),
                }
            }
            "minibatch" => {
                let mut batch = None;
                for (k, v) in &kvs {
                    match k.as_str() {
                        "batch" => batch = Some(parse_usize(id, v)?),
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                let batch =
                    batch.ok_or_else(|| Error::InvalidArgument(format!("{id}: missing batch")))?;
                if batch == 0 {
                    return Err(Error::InvalidArgument(format!("{id}: batch must be >= 1")));
                }
                Ok(Oracle::Minibatch { batch })
            }
            _ => Err(Error::UnknownId(id.to_string())),
        }
    }

    /// Checks the oracle can serve the given problem (synthetic noise needs
    /// an optimal value; minibatching needs a finite sum of enough examples).
    pub fn validate_for(&self, problem: &Problem) -> Result<()> {
        match self {
            Oracle::Exact | Oracle::Gaussian { .. } => Ok(()),
            Oracle::SyntheticA3 { spec } => {
                spec.validate()?;
                problem.require_f_star().map(|_| ())
            }
            Oracle::Minibatch { batch } => match problem.num_examples() {
                Some(n) if *batch <= n => Ok(()),
                Some(n) => Err(Error::InvalidArgument(format!(
                    "batch {batch} exceeds dataset size {n}"
                ))),
                None => Err(Error::InvalidArgument(format!(
                    "problem `{}` is not a finite sum; minibatch oracle not applicable",
                    problem.id()
                ))),
            },
        }
    }

    /// Draws a stochastic gradient at `x`. `grad` and `f` are the true
    /// gradient and value at `x`, passed in so the runner evaluates them
    /// once per step.
    pub fn draw(
        &self,
        problem: &Problem,
        x: &[f64],
        grad: &[f64],
        f: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        match self {
            Oracle::Exact => Ok(grad.to_vec()),
            Oracle::Gaussian { sigma2 } => {
                let d = grad.len();
                let sd = (sigma2 / d as f64).sqrt();
                Ok(grad
                    .iter()
                    .map(|gi| gi + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect())
            }
            Oracle::SyntheticA3 { spec } => {
                let f_star = problem.require_f_star()?;
                let gap = f - f_star;
                if gap < -1e-9 * (1.0 + f.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "objective value {f} fell below the recorded optimum {f_star}"
                    )));
                }
                let sigma = spec.envelope(gap.max(0.0), norm_sq(grad)).sqrt();
                let r: f64 = rng.gen_range(0.0..1.0);
                let d = grad.len();
                let scale = sigma * r / (d as f64).sqrt();
                Ok(grad
                    .iter()
                    .map(|gi| {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        gi + sign * scale
                    })
                    .collect())
            }
            Oracle::Minibatch { batch } => {
                let n = problem.num_examples().ok_or_else(|| {
                    Error::InvalidArgument("minibatch oracle on a non-finite-sum problem".into())
                })?;
                let idx = rand::seq::index::sample(rng, n, (*batch).min(n)).into_vec();
                problem.minibatch_gradient(x, &idx).ok_or_else(|| {
                    Error::InvalidArgument("problem does not provide minibatch gradients".into())
                })
            }
        }
    }
}

/// Extracts envelope-fit samples from a full trajectory record.
pub fn samples_from_record(record: &TrajectoryRecord, f_star: f64) -> Vec<NoiseSample> {
    record
        .steps
        .iter()
        .map(|e| {
            let noise_sq = e
                .g
                .iter()
                .zip(&e.grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            NoiseSample {
                gap: e.f - f_star,
                grad_sq: norm_sq(&e.grad),
                noise_sq,
            }
        })
        .collect()
}

/// Extracts envelope-fit samples from a scalar trace.
pub fn samples_from_scalar_trace(trace: &ScalarTrace, f_star: f64) -> Vec<NoiseSample> {
    trace
        .steps
        .iter()
        .map(|e| NoiseSample {
            gap: e.f - f_star,
            grad_sq: e.grad_norm_sq,
            noise_sq: e.xi_norm_sq,
        })
        .collect()
}

/// Empirically checks an envelope: returns the largest observed ratio
/// `noise_sq / envelope` over `trials_per_point` draws at each probe point
/// (infinite when noise is observed against a zero envelope). A return
/// value <= 1 means no draw exceeded the envelope.
pub fn verify_a3(
    oracle: &Oracle,
    problem: &Problem,
    spec: &NoiseSpec,
    probe_points: &[Vec<f64>],
    trials_per_point: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    spec.validate()?;
    if probe_points.is_empty() || trials_per_point == 0 {
        return Err(Error::InvalidArgument(
            "verification needs at least one probe point and one trial".into(),
        ));
    }
    let f_star = problem.require_f_star()?;
    oracle.validate_for(problem)?;
    let mut max_ratio = 0.0f64;
    for x in probe_points {
        if x.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: x.len(),
            });
        }
        let f = problem.value(x);
        let grad = problem.gradient(x);
        let envelope = spec.envelope((f - f_star).max(0.0), norm_sq(&grad));
        for _ in 0..trials_per_point {
            let g = oracle.draw(problem, x, &grad, f, rng)?;
            let noise_sq: f64 = g
                .iter()
                .zip(&grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let ratio = if envelope > 0.0 {
                noise_sq / envelope
            } else if noise_sq > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_ratio = max_ratio.max(ratio);
        }
    }
    Ok(max_ratio)
}

/// Fits the smallest affine-variance envelope covering all samples:
/// minimizes `w_a A + w_b B + w_c C` subject to
/// `A*gap_i + B*grad_sq_i + C >= noise_sq_i` and `A, B, C >= 0`.
///
/// Default weights are `(mean gap, mean grad_sq, 1)` so that each term's
/// typical contribution to the envelope is costed comparably; a zero mean
/// falls back to weight 1. Ties are broken toward smaller `B`, then smaller
/// `A`, and `C` is completed to the smallest feasible value — so a fit with
/// `B = 0` reports exactly zero.
pub fn estimate_noise_params(
    samples: &[NoiseSample],
    weights: Option<[f64; 3]>,
) -> Result<NoiseFit> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("envelope fit needs at least one sample".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        for (name, v) in [("gap", s.gap), ("grad_sq", s.grad_sq), ("noise_sq", s.noise_sq)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: {name} must be finite and >= 0, got {v}"
                )));
            }
        }
    }
    let n = samples.len() as f64;
    let mean_gap = samples.iter().map(|s| s.gap).sum::<f64>() / n;
    let mean_grad = samples.iter().map(|s| s.grad_sq).sum::<f64>() / n;
    let w = weights.unwrap_or([
        if mean_gap > 0.0 { mean_gap } else { 1.0 },
        if mean_grad > 0.0 { mean_grad } else { 1.0 },
        1.0,
    ]);
    if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidArgument(format!("weights must be positive, got {w:?}")));
    }

    let max_noise = samples.iter().map(|s| s.noise_sq).fold(0.0f64, f64::max);
    let cons: Vec<HalfSpace> = samples
        .iter()
        .map(|s| HalfSpace::new(vec![s.gap, s.grad_sq, 1.0], s.noise_sq))
        .collect();
    // (0, 0, max_noise) is feasible, so any prefix optimum has cost at most
    // w_c * max_noise and coordinates at most that over the smallest weight;
    // the box is two orders of magnitude beyond and never active.
    let w_min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = 100.0 * (1.0 + w[2] * max_noise / w_min);

    let x1 = solve_min(&w, &cons, hi, 0xA3)?;
    let z_star: f64 = w.iter().zip(&x1).map(|(a, b)| a * b).sum();
    let z_cap = z_star + 1e-9 * (1.0 + z_star.abs());

    // tie-break 1: smallest B. Try the B = 0 face first so that an optimal
    // face fit reports B as exactly zero.
    let cons_b0: Vec<HalfSpace> = samples
        .iter()
        .map(|s| HalfSpace::new(vec![s.gap, 1.0], s.noise_sq))
        .collect();
    let b0_opt = solve_min(&[w[0], w[2]], &cons_b0, hi, 0xA4)
        .ok()
        .filter(|x| w[0] * x[0] + w[2] * x[1] <= z_cap);

    let (a_star, b_star) = if b0_opt.is_some() {
        // tie-break 2: smallest A on the B = 0 face under the cost cap
        let mut cons_a = cons_b0.clone();
        cons_a.push(HalfSpace::new(vec![-w[0], -w[2]], -z_cap));
        let xa = solve_min(&[1.0, 0.0], &cons_a, hi, 0xA5)?;
        (xa[0], 0.0)
    } else {
        let mut cons_b = cons.clone();
        cons_b.push(HalfSpace::new(vec![-w[0], -w[1], -w[2]], -z_cap));
        let xb = solve_min(&[0.0, 1.0, 0.0], &cons_b, hi, 0xA6)?;
        let b_star = xb[1];
        let b_cap = b_star + 1e-9 * (1.0 + b_star);
        let mut cons_a = cons_b.clone();
        cons_a.push(HalfSpace::new(vec![0.0, -1.0, 0.0], -b_cap));
        let xa = solve_min(&[1.0, 0.0, 0.0], &cons_a, hi, 0xA7)?;
        (xa[0], b_star)
    };
    // complete with the smallest feasible constant
    let c_star = samples
        .iter()
        .map(|s| s.noise_sq - a_star * s.gap - b_star * s.grad_sq)
        .fold(0.0f64, f64::max);

    let fit = NoiseFit {
        a: a_star,
        b: b_star,
        c: c_star,
        weights: w,
        max_ratio: 0.0,
        n_samples: samples.len(),
    };
    // defensive feasibility validation; the fit must cover every sample
    let tol = 1e-9 * max_noise.max(1.0);
    let mut max_ratio = 0.0f64;
    for s in samples {
        let env = fit.spec().envelope(s.gap, s.grad_sq);
        if env + tol < s.noise_sq {
            return Err(Error::InvalidArgument(format!(
                "internal: fitted envelope {env} < observed {}",
                s.noise_sq
            )));
        }
        let ratio = if env > 0.0 {
            s.noise_sq / env
        } else {
            0.0
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(NoiseFit { max_ratio, ..fit })
}

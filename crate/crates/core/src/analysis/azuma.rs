//! Monte-Carlo harness for the martingale tail inequality.
//!
//! For increments `Z_s` with `E[Z_s | past] = 0` and a certified conditional
//! moment `E[exp(Z_s^2 / sigma_s^2) | past] <= e`, the tail bound states
//!
//! ```text
//! P( sum_s Z_s > (1/lambda) log(1/delta) + (3/4) lambda sum_s sigma_s^2 ) <= delta
//! ```
//!
//! for every `lambda > 0`. The harness samples trials of a chosen increment
//! model and reports how often the threshold is crossed; an implementation
//! error in the constants shows up as a violation frequency well above
//! `delta` for models that sit on the moment boundary.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A martingale-difference model with certified conditional scales.
pub trait IncrementModel: Sync {
    fn horizon(&self) -> usize;
    /// Draws `(z_s, sigma_s)` for step `s` (1-based).
    fn draw(&self, s: usize, rng: &mut ChaCha8Rng) -> (f64, f64);
    fn id(&self) -> String;
}

/// All increments zero; the threshold is never crossed.
pub struct ZeroIncrements {
    pub t: usize,
}

impl IncrementModel for ZeroIncrements {
    fn horizon(&self) -> usize {
        self.t
    }
    fn draw(&self, _s: usize, _rng: &mut ChaCha8Rng) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn id(&self) -> String {
        format!("zero:T={}", self.t)
    }
}

/// `Z_s = ±sigma` with equal probability. This sits exactly on the moment
/// boundary: `E exp(Z^2 / sigma^2) = e`, so it is the natural stress case.
pub struct RademacherBoundary {
    pub t: usize,
    pub sigma: f64,
}

impl IncrementModel for RademacherBoundary {
    fn horizon(&self) -> usize {
        self.t
    }
    fn draw(&self, _s: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let z = if rng.gen_bool(0.5) { self.sigma } else { -self.sigma };
        (z, self.sigma)
    }
    fn id(&self) -> String {
        format!("rademacher:T={},sigma={}", self.t, self.sigma)
    }
}

/// Centered Gaussian with standard deviation `scale`, rejected outside
/// `±4 scale`. The certified scale `sigma_s = scale sqrt(2/(1 - e^{-2}))`
/// gives `E exp(Z^2/sigma_s^2) = e` for the untruncated law; truncation only
/// lowers the moment, so the certificate stays valid with a small margin.
pub struct TruncatedGaussian {
    pub t: usize,
    pub scale: f64,
}

impl TruncatedGaussian {
    pub fn certified_sigma(&self) -> f64 {
        self.scale * (2.0 / (1.0 - (-2.0f64).exp())).sqrt()
    }
}

impl IncrementModel for TruncatedGaussian {
    fn horizon(&self) -> usize {
        self.t
    }
    fn draw(&self, _s: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let normal = Normal::new(0.0, self.scale).expect("positive scale");
        let z = loop {
            let z = normal.sample(rng);
            if z.abs() <= 4.0 * self.scale {
                break z;
            }
        };
        (z, self.certified_sigma())
    }
    fn id(&self) -> String {
        format!("truncated-gaussian:T={},scale={}", self.t, self.scale)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AzumaResult {
    pub model: String,
    pub lambda: f64,
    pub delta: f64,
    pub trials: usize,
    pub horizon: usize,
    pub violations: usize,
    pub violation_freq: f64,
    /// `delta + 3 sqrt(delta (1-delta) / trials)`: the frequency admissible
    /// for a true violation probability of at most `delta`.
    pub freq_bound: f64,
    pub within_band: bool,
}

/// Runs `trials` independent trajectories of the model and counts threshold
/// crossings. Each trial draws from its own deterministic stream of `seed`,
/// so results are reproducible and independent of thread scheduling.
pub fn azuma_monte_carlo(
    model: &dyn IncrementModel,
    lambda: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<AzumaResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let t = model.horizon();
    if t == 0 {
        return Err(Error::InvalidArgument("model horizon must be >= 1".into()));
    }

    let log_term = (1.0 / delta).ln() / lambda;
    let violations = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64 + 1);
            let mut sum = 0.0f64;
            let mut var = 0.0f64;
            for s in 1..=t {
                let (z, sigma) = model.draw(s, &mut rng);
                sum += z;
                var += sigma * sigma;
            }
            let threshold = log_term + 0.75 * lambda * var;
            usize::from(sum > threshold)
        })
        .sum::<usize>();

    let violation_freq = violations as f64 / trials as f64;
    let freq_bound = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    Ok(AzumaResult {
        model: model.id(),
        lambda,
        delta,
        trials,
        horizon: t,
        violations,
        violation_freq,
        freq_bound,
        within_band: violation_freq <= freq_bound,
    })
}

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyper-parameters of the momentum AdaGrad update.
///
/// `eta` is the base step size, `beta` the momentum coefficient (`beta = 0`
/// recovers plain AdaGrad), `epsilon` the denominator shift added *after*
/// the square root, and `horizon` the number of stochastic steps `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub horizon: usize,
}

impl HyperParams {
    pub fn new(eta: f64, beta: f64, epsilon: f64, horizon: usize) -> Result<Self> {
        let hp = HyperParams {
            eta,
            beta,
            epsilon,
            horizon,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidHyper(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidHyper(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidHyper(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidHyper("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// `1 - beta`, the quantity most bounds divide by.
    pub fn one_minus_beta(&self) -> f64 {
        1.0 - self.beta
    }
}

//! Numerical laboratory for adaptive gradient methods with heavy-ball momentum.
//!
//! The crate is organised around four layers:
//!
//! * [`optim`] — the optimizer step rules and trajectory runner, together with
//!   the full per-step [`trajectory::TrajectoryRecord`] used by all downstream
//!   analysis.
//! * [`problems`] / [`dataset`] — benchmark objectives (isotropic quadratic,
//!   separable quartic, sparse regularized logistic regression) plus a libsvm
//!   loader and an empirical smoothness probe.
//! * [`oracles`] — stochastic gradient oracles (exact, minibatch, synthetic
//!   affine-variance, Gaussian) and the noise-envelope estimator built on a
//!   small fixed-dimension linear-program solver ([`lp`]).
//! * [`analysis`] — noise budgets, evaluated convergence bounds, per-lemma
//!   trajectory invariant checks, a martingale Monte Carlo harness, and
//!   log–log rate fitting.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod hyper;
pub mod lp;
pub mod optim;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
pub use hyper::HyperParams;
pub use optim::{Method, OptimizerState};
pub use oracles::{NoiseFit, NoiseSample, NoiseSpec, Oracle};
pub use problems::{Problem, Smoothness};
pub use trajectory::{ScalarTrace, TrajectoryRecord};

//! Certificates, budgets, bounds, and statistical checks built on top of
//! recorded trajectories.

pub mod azuma;
pub mod bounds;
pub mod budget;
pub mod invariants;
pub mod rate;

pub use azuma::{
    azuma_monte_carlo, AzumaResult, IncrementModel, RademacherBoundary, TruncatedGaussian,
    ZeroIncrements,
};
pub use bounds::{
    compute_theorem1_bound, compute_theorem2_bound, f_polynomial, gen_i_polynomial,
    gen_j_polynomial, BoundReport, GenSmoothBound, TheoremBound,
};
pub use budget::{
    compute_noise_budget, gen_budgets, gen_gradient_bound, proxy_stepsize, LogMode, NoiseBudget,
};
pub use invariants::{
    check_trajectory_invariants, log_sum_lemma, CheckResult, CheckStatus, InvariantOptions,
    InvariantReport, CHECK_NAMES, REL_TOL, Y_RESIDUAL_TOL,
};
pub use rate::{fit_loglog_rate, hp_fraction, HpSummary, RateFit};

//! Command-line harness around `adalab-core`: experiment configs, parallel
//! seeded runs with persisted artifacts, rate sweeps, noise-envelope
//! estimation, stored-trajectory re-checking and report rendering.

pub mod config;
pub mod plot;
pub mod rows;
pub mod runner;

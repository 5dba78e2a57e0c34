//! Gradient dynamics of deep linear networks trained with transposed (BP) or
//! random, optionally updated, feedback.
//!
//! Layer `i` maps `n_{i-1}` to `n_i` units, `W_i` is `n_i x n_{i-1}` and the
//! feedback matrix `R_i` is `n_{i-1} x n_i`. With `W(0) = 0` the feedback
//! stays on the line `R_i(t) = R_i(0) + eps * W_i(t)^t`, so only `R_i(0)` is
//! stored. `eps = 0` is fixed random feedback, `eps = 1` updated feedback.
//!
//! Integration is explicit Euler. A run is reported unstable once the error
//! norm grows tenfold over its starting value.

mod matrix;
mod scalar;
mod sim;

pub use matrix::{aligned_init, AlignedInit, DynRule, MatrixDynState};
pub use scalar::{
    conserved_check, euler_step_scalar, rate_monotonicity, sample_ordered_feedback, ConservationMonitor,
    MonotonicityReport, ScalarDynState,
};
pub use sim::{replicate_sim, SimBundle, SimConfig, SimRun};

pub use matrix::euler_step_matrix;

use thiserror::Error;

/// Default Euler step.
pub const DEFAULT_DT: f64 = 1e-3;

/// A run has passed once `e^2 <= PASSAGE_FRACTION * e^2(0)`.
pub const PASSAGE_FRACTION: f64 = 1e-6;

/// Growth of the error norm over its initial value that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("integration diverged at iteration {iteration} (error grew {growth:.3e}x); retry with dt <= {suggested_dt:e}")]
    Unstable {
        iteration: usize,
        growth: f64,
        suggested_dt: f64,
    },
    #[error("invalid setup: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DynError>;

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(DynError::Invalid(format!("dt must be finite and > 0, got {dt}")))
    }
}

fn check_growth(iteration: usize, now: f64, initial: f64, dt: f64) -> Result<()> {
    if now.is_finite() && now <= DIVERGENCE_FACTOR * initial {
        return Ok(());
    }
    Err(DynError::Unstable {
        iteration,
        growth: if initial > 0.0 { now / initial } else { f64::INFINITY },
        suggested_dt: dt / 10.0,
    })
}

/// First iteration at which `e2[t] <= PASSAGE_FRACTION * e2[0]`.
pub fn first_passage(e2: &[f64]) -> Option<usize> {
    let first = *e2.first()?;
    e2.iter().position(|&v| v <= PASSAGE_FRACTION * first)
}

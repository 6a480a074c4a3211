//! Deterministic convex surrogates of the probabilistic voltage band.
//!
//! Each node-phase gets four shifted circles (upper bound) and four shifted
//! half-planes (lower bound), one per sign corner of `±α σ_re`, `±α σ_im`.

mod normal;
mod tighten;
mod verify;

use thiserror::Error;

pub use normal::{compute_alpha, inverse_normal_cdf};
pub use tighten::{
    min_halfplane_coeffs, tighten_constraints, Circle, HalfPlane, NodeConstraints, TightenedConstraintSet, CORNERS,
};
pub use verify::{check_corner_sufficiency, max_corner_violation, verify_chance_satisfaction};

#[derive(Debug, Error, PartialEq)]
pub enum ChanceError {
    #[error("beta must lie in (0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("voltage limits must satisfy 0 < v_min < v_max, got [{v_min}, {v_max}]")]
    InvalidLimits { v_min: f64, v_max: f64 },
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("estimate at node-phase {node} has magnitude {magnitude:.3e}, too small to orient a half-plane")]
    DegenerateEstimate { node: usize, magnitude: f64 },
    #[error("covariance diagonal entry {index} is {value:.3e}")]
    InvalidCovariance { index: usize, value: f64 },
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("at least one sample is required")]
    NoSamples,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Probability target and the voltage band it applies to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChanceSpec {
    pub beta: f64,
    pub alpha: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl ChanceSpec {
    /// α derived from β.
    pub fn new(beta: f64, v_min: f64, v_max: f64) -> Result<Self, ChanceError> {
        let alpha = compute_alpha(beta)?;
        Self::with_alpha(beta, alpha, v_min, v_max)
    }

    /// Explicit α, e.g. `0` to ignore the estimation covariance.
    pub fn with_alpha(beta: f64, alpha: f64, v_min: f64, v_max: f64) -> Result<Self, ChanceError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(ChanceError::InvalidBeta(beta));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(ChanceError::InvalidAlpha(alpha));
        }
        if !(v_min > 0.0 && v_min < v_max && v_max.is_finite()) {
            return Err(ChanceError::InvalidLimits { v_min, v_max });
        }
        Ok(Self {
            beta,
            alpha,
            v_min,
            v_max,
        })
    }

    pub fn ignoring_covariance(self) -> Self {
        Self { alpha: 0.0, ..self }
    }
}

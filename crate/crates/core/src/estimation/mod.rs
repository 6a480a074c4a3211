//! Weighted-least-squares state estimation with Gaussian uncertainty output.
//!
//! The estimator consumes sparse voltage/current measurements plus noisy load
//! pseudo-measurements and returns a mean voltage estimate together with its
//! covariance in rectangular coordinates, `V_rect ~ N(V_est,rect, Σ_est,rect)`.

mod measurement;
mod polar;
mod wls;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::GridError;
use crate::powerflow::{ComplexVoltageState, PowerFlowError};

pub use measurement::{
    evaluate, generate_measurements, Location, MeasuredValue, Measurement, MeasurementKind,
    MeasurementPlan, MeasurementSet, NoiseShape, Placement,
};
pub(crate) use measurement::{check_location, linear_form};
pub use polar::polar_to_rect_covariance;
pub use wls::{estimate_state, estimate_state_with, EstimatorOptions};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("measurement {index}: {reason}")]
    InvalidMeasurement { index: usize, reason: String },
    #[error("system is unobservable: information matrix has a {null_dim}-dimensional null space")]
    Unobservable { null_dim: usize },
    #[error("Gauss-Newton did not converge after {iterations} iterations (last step {last_step:.3e})")]
    Diverged { iterations: usize, last_step: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Gaussian voltage estimate: mean plus `2N × 2N` rectangular covariance.
#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub estimate: ComplexVoltageState,
    /// Covariance of `[Re V; Im V]`, p.u.².
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    /// Weighted sum of squared residuals at the estimate.
    pub objective: f64,
}

impl EstimationResult {
    pub fn n(&self) -> usize {
        self.estimate.n()
    }

    pub fn v_est(&self) -> &DVector<Complex64> {
        &self.estimate.nodes
    }

    pub fn v_est_rect(&self) -> DVector<f64> {
        self.estimate.rect()
    }

    /// Variance of the real part at node `i`.
    pub fn var_re(&self, i: usize) -> f64 {
        self.covariance[(i, i)]
    }

    /// Variance of the imaginary part at node `i`.
    pub fn var_im(&self, i: usize) -> f64 {
        let n = self.n();
        self.covariance[(n + i, n + i)]
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    /// Estimate with a prescribed covariance, e.g. from an external estimator.
    pub fn from_parts(estimate: ComplexVoltageState, covariance: DMatrix<f64>) -> Result<Self, EstimationError> {
        let dim = 2 * estimate.n();
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(EstimationError::Dimension {
                expected: dim,
                got: covariance.nrows(),
            });
        }
        Ok(Self {
            estimate,
            covariance,
            iterations: 0,
            objective: 0.0,
        })
    }
}

//! Exact three-phase power flow and its first-order linearization.

mod linearize;
mod newton;

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{AdmittanceMatrix, GridError};

pub use linearize::{linearize, SensitivityMatrix};
pub use newton::{solve_powerflow, solve_powerflow_with, PowerFlowCase, PowerFlowOptions, PowerFlowSolution};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid voltage state: {0}")]
    InvalidState(String),
    #[error("power flow diverged after {iterations} iterations (mismatch {residual:.3e} p.u.)")]
    Diverged { iterations: usize, residual: f64 },
    #[error("voltage collapse at row {row}: |V| = {magnitude:.4} p.u.")]
    LowVoltage { row: usize, magnitude: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Source and node-phase voltages in p.u.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVoltageState {
    pub source: [Complex64; 3],
    /// Non-source node-phases, in admittance-row order minus the source rows.
    pub nodes: DVector<Complex64>,
}

impl ComplexVoltageState {
    pub fn new(source: [Complex64; 3], nodes: DVector<Complex64>) -> Result<Self, PowerFlowError> {
        let all = source.iter().chain(nodes.iter());
        for (row, v) in all.enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(PowerFlowError::InvalidState(format!("non-finite voltage at row {row}")));
            }
            if v.norm() == 0.0 {
                return Err(PowerFlowError::InvalidState(format!("zero voltage at row {row}")));
            }
        }
        Ok(Self { source, nodes })
    }

    pub fn from_rect(source: [Complex64; 3], rect: &DVector<f64>) -> Result<Self, PowerFlowError> {
        if !rect.len().is_multiple_of(2) {
            return Err(PowerFlowError::Dimension {
                expected: rect.len() + 1,
                got: rect.len(),
            });
        }
        let n = rect.len() / 2;
        Self::new(source, DVector::from_fn(n, |i, _| Complex64::new(rect[i], rect[n + i])))
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// `[V_src; V]`, length `N + 3`.
    pub fn bus_vector(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.n() + 3, self.source.iter().chain(self.nodes.iter()).copied())
    }

    /// `[Re V; Im V]`, length `2N`.
    pub fn rect(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |i, _| if i < n { self.nodes[i].re } else { self.nodes[i - n].im })
    }

    /// Magnitudes and angles (radians) of the non-source nodes.
    pub fn polar(&self) -> (DVector<f64>, DVector<f64>) {
        (self.nodes.map(|v| v.norm()), self.nodes.map(|v| v.arg()))
    }

    pub fn magnitudes(&self) -> DVector<f64> {
        self.nodes.map(|v| v.norm())
    }
}

/// Complex power injected at each node-phase (generation positive), p.u.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerInjection(pub DVector<Complex64>);

impl PowerInjection {
    pub fn active(&self) -> DVector<f64> {
        self.0.map(|s| s.re)
    }

    pub fn reactive(&self) -> DVector<f64> {
        self.0.map(|s| s.im)
    }
}

/// `S_i = V_i · conj((Y V_bus)_i)` over all `N + 3` rows.
pub fn compute_injections(
    y: &AdmittanceMatrix,
    v: &ComplexVoltageState,
) -> Result<PowerInjection, PowerFlowError> {
    if y.dim() != v.n() + 3 {
        return Err(PowerFlowError::Dimension {
            expected: y.dim(),
            got: v.n() + 3,
        });
    }
    let vb = v.bus_vector();
    let current = &y.matrix * &vb;
    Ok(PowerInjection(vb.zip_map(&current, |vi, ii| vi * ii.conj())))
}

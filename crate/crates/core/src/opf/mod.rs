//! Linearized OPF with tightened voltage limits: assembly, solution and
//! conversion back to absolute setpoints.

mod ipm;
mod program;
mod setpoints;

use thiserror::Error;

pub use ipm::{solve_program, solve_program_with, IpmOptions, KktResiduals, OpfSolution, SolveStatus};
pub use program::{
    add_thermal_constraints, assemble_program, ConvexProgram, DgLimits, GramForm, IneqKind, Inequality,
    ProgramOptions, ThermalLimit, VariableLayout,
};
pub use setpoints::{extract_setpoints, round_taps, DgSetpoint, Setpoints};

#[derive(Debug, Error, PartialEq)]
pub enum OpfError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("previous setpoints are inconsistent: {0}")]
    InconsistentPrev(String),
    #[error("invalid limit: {0}")]
    InvalidLimit(String),
    #[error("solver status is {0}, setpoints unavailable")]
    NotOptimal(SolveStatus),
}

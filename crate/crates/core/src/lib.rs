//! Chance-constrained optimal power flow for unbalanced three-phase
//! distribution feeders whose state is only known through a noisy state
//! estimate.
//!
//! The pipeline per control step is: exact power flow for ground truth
//! ([`powerflow`]), synthetic measurements and weighted-least-squares
//! estimation ([`estimation`]), deterministic tightening of the probabilistic
//! voltage limits ([`chance`]), and a convex program over linearized
//! power-flow deltas solved by a primal-dual interior-point method ([`opf`]).
//! [`sim`] runs the closed loop over a day and writes reports.

pub mod chance;
pub mod estimation;
pub mod grid;
pub mod linalg;
pub mod opf;
pub mod powerflow;
pub mod sim;

pub use num_complex::Complex64;

pub use chance::{compute_alpha, ChanceSpec, TightenedConstraintSet};
pub use estimation::{EstimationResult, MeasurementSet};
pub use grid::{AdmittanceMatrix, GridModel, Phase, TapVector};
pub use opf::{ConvexProgram, OpfSolution, Setpoints, SolveStatus};
pub use powerflow::{ComplexVoltageState, PowerInjection, SensitivityMatrix};
pub use sim::{Scenario, StepRecord};


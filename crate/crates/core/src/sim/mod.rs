//! Closed-loop day simulation: ground truth, measurement, estimation,
//! chance-constrained OPF, setpoint application and reporting.

mod output;
mod run;
mod scenario;
mod step;
mod svg;

use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridError;

pub use output::{emit_outputs, write_comparison, write_steps_csv, Comparison, Summary, STEPS_HEADER};
pub use run::{compare_cases, initial_setpoints, run_scenario, run_scenario_with};
pub use scenario::{
    build_scenario, load_inputs, CaseMode, GeneratorFile, GeneratorSeries, LoadFile, LoadSeries, MeasurementFile,
    Overrides, Scenario, ScenarioFile, ThermalFile,
};
pub use step::{
    project_setpoints, run_timestep, StepOptions, StepRecord, StepStatus, ACTIVE_DUAL, CURTAIL_TOL, VIOLATION_TOL,
};
pub use svg::{LinePlot, Series};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{}: field '{field}': {reason}", path.display())]
    Config {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Grid {
        path: PathBuf,
        #[source]
        source: GridError,
    },
}

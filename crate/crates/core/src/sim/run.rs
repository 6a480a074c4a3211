use super::step::{run_step_with, StepContext};
use super::{CaseMode, Scenario, StepOptions, StepRecord};
use crate::opf::{DgSetpoint, Setpoints};

/// Nominal taps, idle generators and the grid's source voltage.
pub fn initial_setpoints(scn: &Scenario) -> Setpoints {
    let dg = scn
        .generators
        .iter()
        .map(|g| DgSetpoint { row: g.row, p: 0.0, q: 0.0 })
        .collect();
    Setpoints::new(scn.initial_tap, dg, scn.grid.v_source)
}

pub fn run_scenario(scn: &Scenario) -> Vec<StepRecord> {
    run_scenario_with(scn, &StepOptions::default())
}

/// Sequential closed loop over the horizon, carrying setpoints.
pub fn run_scenario_with(scn: &Scenario, opts: &StepOptions) -> Vec<StepRecord> {
    let ctx = StepContext::new(scn);
    let mut carried = initial_setpoints(scn);
    let mut out = Vec::with_capacity(scn.horizon);
    for t in 0..scn.horizon {
        let (rec, next) = run_step_with(&ctx, t, &carried, opts);
        log::info!(
            "[{}] t={t} status={} violations={}",
            scn.case.label(),
            rec.status.label(),
            rec.violations()
        );
        out.push(rec);
        carried = next;
    }
    out
}

/// Both case modes on the same seed, run concurrently.
/// Returns `(with covariance, without covariance)`.
pub fn compare_cases(scn: &Scenario, opts: &StepOptions) -> (Vec<StepRecord>, Vec<StepRecord>) {
    let with = Scenario {
        case: CaseMode::WithCov,
        ..scn.clone()
    };
    let without = Scenario {
        case: CaseMode::NoCov,
        ..scn.clone()
    };
    rayon::join(|| run_scenario_with(&with, opts), || run_scenario_with(&without, opts))
}

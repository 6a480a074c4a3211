use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;

use super::{CaseMode, Scenario};
use crate::chance::{tighten_constraints, verify_chance_satisfaction, ChanceSpec};
use crate::estimation::{estimate_state_with, generate_measurements, EstimationResult, EstimatorOptions};
use crate::grid::{build_isolated_admittance, AdmittanceMatrix};
use crate::opf::{
    add_thermal_constraints, assemble_program, extract_setpoints, solve_program, ConvexProgram, DgLimits,
    DgSetpoint, OpfSolution, ProgramOptions, Setpoints, SolveStatus,
};
use crate::powerflow::{linearize, solve_powerflow_with, PowerFlowCase, PowerFlowOptions};

/// Realized magnitudes beyond the band by more than this count as violations.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Unused apparent power above this counts as curtailment, p.u.
pub const CURTAIL_TOL: f64 = 1e-4;
/// Voltage multipliers above this mark a binding constraint.
pub const ACTIVE_DUAL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    /// Optimal only after softening the voltage constraints.
    OptimalSoft,
    Infeasible,
    MaxIter,
    /// Power flow or estimation failed; previous setpoints carried.
    Failed,
}

impl StepStatus {
    pub fn label(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::OptimalSoft => "optimal_soft",
            Self::Infeasible => "infeasible",
            Self::MaxIter => "max_iter",
            Self::Failed => "failed",
        }
    }

    pub fn applied(self) -> bool {
        matches!(self, Self::Optimal | Self::OptimalSoft)
    }
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub status: StepStatus,
    /// Truth magnitudes before the control action.
    pub v_true: DVector<f64>,
    pub v_est: DVector<f64>,
    pub sigma_re: DVector<f64>,
    pub sigma_im: DVector<f64>,
    pub sigma_trace: f64,
    /// Truth magnitudes after applying the new setpoints.
    pub v_real: DVector<f64>,
    pub violation: Vec<bool>,
    pub setpoints: Setpoints,
    pub dg_available: Vec<f64>,
    pub objective: f64,
    pub curtailed: bool,
    pub max_voltage_dual: f64,
    /// `‖V_realized − (V_est + ΔV*)‖∞`, p.u.
    pub predicted_gap: f64,
    /// Smallest per-node band probability from the optional verifier.
    pub min_probability: Option<f64>,
    pub wall_seconds: f64,
    /// Program and solution, when requested through [`StepOptions`].
    pub program_dump: Option<serde_json::Value>,
}

impl StepRecord {
    pub fn violations(&self) -> usize {
        self.violation.iter().filter(|&&v| v).count()
    }

    pub fn worst_excursion(&self, v_min: f64, v_max: f64) -> f64 {
        self.v_real
            .iter()
            .map(|&v| (v - v_max).max(v_min - v).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn dg_used(&self) -> f64 {
        self.setpoints.dg.iter().map(|d| d.p).sum()
    }

    pub fn dg_apparent_used(&self) -> f64 {
        self.setpoints.dg.iter().map(|d| d.p.hypot(d.q)).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct StepOptions {
    /// Monte-Carlo samples for the per-step band-probability check.
    pub verify_samples: Option<usize>,
    /// Keep each step's program and solution as JSON in the record.
    pub dump_program: bool,
}

/// Outputs of the controller part of one step, before the realized power flow.
pub struct ControlOutcome {
    pub estimate: EstimationResult,
    pub program: ConvexProgram,
    pub solution: OpfSolution,
    pub status: StepStatus,
}

/// Previous generator setpoints moved into the current availability.
pub fn project_setpoints(prev: &Setpoints, limits: &[DgLimits]) -> Setpoints {
    let dg = prev
        .dg
        .iter()
        .zip(limits)
        .map(|(d, l)| {
            let mut p = d.p.clamp(l.p_min, l.p_max);
            let mut q = d.q.clamp(l.q_min, l.q_max);
            let s = p.hypot(q);
            if s > l.s_max {
                let k = if s > 0.0 { l.s_max / s } else { 0.0 };
                p *= k;
                q *= k;
                p = p.max(l.p_min.min(l.s_max));
            }
            DgSetpoint { row: d.row, p, q }
        })
        .collect();
    Setpoints { dg, ..prev.clone() }
}

pub(crate) fn step_seed(seed: u64, t: usize) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) struct StepContext<'a> {
    pub scn: &'a Scenario,
    pub y: AdmittanceMatrix,
}

impl<'a> StepContext<'a> {
    pub fn new(scn: &'a Scenario) -> Self {
        Self {
            scn,
            y: build_isolated_admittance(&scn.grid),
        }
    }
}

fn truth_flow(
    ctx: &StepContext<'_>,
    loads: &DVector<Complex64>,
    sp: &Setpoints,
) -> Option<(crate::powerflow::ComplexVoltageState, DVector<Complex64>)> {
    let n = ctx.scn.grid.n();
    let case = PowerFlowCase::new(loads, &sp.generation(n), sp.tap, sp.v_source);
    match solve_powerflow_with(&ctx.scn.grid, &ctx.y, &case, &PowerFlowOptions::default()) {
        Ok(sol) => Some((sol.state, case.injection)),
        Err(e) => {
            log::warn!("power flow failed: {e}");
            None
        }
    }
}

/// Measurement, estimation, tightening and OPF for one step.
pub(crate) fn control(
    ctx: &StepContext<'_>,
    t: usize,
    truth: &crate::powerflow::ComplexVoltageState,
    injection: &DVector<Complex64>,
    loads: &DVector<Complex64>,
    prev: &Setpoints,
    limits: &[DgLimits],
) -> Option<ControlOutcome> {
    let scn = ctx.scn;
    let grid = &scn.grid;
    let meas = match generate_measurements(grid, &ctx.y, &scn.plan, truth, injection, loads, step_seed(scn.seed, t)) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("step {t}: measurement generation failed: {e}");
            return None;
        }
    };
    let est_opts = EstimatorOptions {
        v_source: Some(prev.v_source),
        ..EstimatorOptions::default()
    };
    let estimate = match estimate_state_with(grid, &ctx.y, &meas, &prev.tap, &est_opts) {
        Ok(e) => e,
        Err(e) => {
            log::warn!("step {t}: estimation failed: {e}");
            return None;
        }
    };
    let base = ChanceSpec::new(scn.beta, scn.v_min, scn.v_max).ok()?;
    let spec = match scn.case {
        CaseMode::WithCov => base,
        CaseMode::NoCov => base.ignoring_covariance(),
    };
    let set = match tighten_constraints(&estimate, &spec) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("step {t}: tightening failed: {e}");
            return None;
        }
    };
    let m = linearize(&ctx.y, &estimate.estimate).ok()?;
    let build = |soft: Option<f64>| -> Option<ConvexProgram> {
        let opts = ProgramOptions {
            free_source: scn.free_source,
            reactive_weight: scn.reactive_weight,
            soft_penalty: soft,
        };
        let mut p = match assemble_program(grid, &m, &estimate, &set, limits, prev, &opts) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("step {t}: assembly failed: {e}");
                return None;
            }
        };
        if let Err(e) = add_thermal_constraints(&mut p, grid, &ctx.y, &scn.thermal) {
            log::warn!("step {t}: thermal limits rejected: {e}");
            return None;
        }
        Some(p)
    };
    let program = build(None)?;
    let solution = solve_program(&program);
    let outcome = match (solution.status, scn.soft_penalty) {
        (SolveStatus::Optimal, _) => ControlOutcome {
            estimate,
            program,
            solution,
            status: StepStatus::Optimal,
        },
        (SolveStatus::Infeasible, Some(w)) => {
            log::warn!("step {t}: hard program infeasible, retrying with soft voltage limits");
            let program = build(Some(w))?;
            let solution = solve_program(&program);
            let status = match solution.status {
                SolveStatus::Optimal => StepStatus::OptimalSoft,
                SolveStatus::Infeasible => StepStatus::Infeasible,
                SolveStatus::MaxIter => StepStatus::MaxIter,
            };
            ControlOutcome {
                estimate,
                program,
                solution,
                status,
            }
        }
        (s, _) => ControlOutcome {
            estimate,
            program,
            solution,
            status: match s {
                SolveStatus::Infeasible => StepStatus::Infeasible,
                _ => StepStatus::MaxIter,
            },
        },
    };
    Some(outcome)
}

/// One closed-loop step. Returns the record and the setpoints to carry.
pub fn run_timestep(scn: &Scenario, t: usize, carried: &Setpoints, opts: &StepOptions) -> (StepRecord, Setpoints) {
    run_step_with(&StepContext::new(scn), t, carried, opts)
}

pub(crate) fn run_step_with(
    ctx: &StepContext<'_>,
    t: usize,
    carried: &Setpoints,
    opts: &StepOptions,
) -> (StepRecord, Setpoints) {
    let started = Instant::now();
    let scn = ctx.scn;
    let n = scn.grid.n();
    let limits = scn.dg_limits_at(t);
    let prev = project_setpoints(carried, &limits);
    let loads = scn.loads_at(t);
    let nan = DVector::from_element(n, f64::NAN);
    let mut rec = StepRecord {
        t,
        status: StepStatus::Failed,
        v_true: nan.clone(),
        v_est: nan.clone(),
        sigma_re: nan.clone(),
        sigma_im: nan.clone(),
        sigma_trace: f64::NAN,
        v_real: nan.clone(),
        violation: vec![false; n],
        setpoints: prev.clone(),
        dg_available: limits.iter().map(|l| l.s_max).collect(),
        objective: f64::NAN,
        curtailed: false,
        max_voltage_dual: f64::NAN,
        predicted_gap: f64::NAN,
        min_probability: None,
        wall_seconds: 0.0,
        program_dump: None,
    };

    let Some((truth, injection)) = truth_flow(ctx, &loads, &prev) else {
        return finalize(ctx, rec, &loads, None, started);
    };
    rec.v_true = truth.magnitudes();
    let Some(out) = control(ctx, t, &truth, &injection, &loads, &prev, &limits) else {
        return finalize(ctx, rec, &loads, None, started);
    };
    rec.v_est = out.estimate.estimate.magnitudes();
    rec.sigma_re = DVector::from_fn(n, |i, _| out.estimate.var_re(i).max(0.0).sqrt());
    rec.sigma_im = DVector::from_fn(n, |i, _| out.estimate.var_im(i).max(0.0).sqrt());
    rec.sigma_trace = out.estimate.trace();
    rec.status = out.status;
    rec.objective = out.solution.objective;
    rec.max_voltage_dual = out.solution.max_voltage_dual(&out.program);
    if opts.dump_program {
        rec.program_dump = Some(serde_json::json!({
            "t": t,
            "status": out.status.label(),
            "program": out.program.to_json(),
            "solution": {
                "x": out.solution.x.as_slice(),
                "objective": out.solution.objective,
                "solver_status": out.solution.status.to_string(),
                "iterations": out.solution.iterations,
                "residuals": out.solution.residuals,
                "eq_duals": out.solution.eq_duals.as_slice(),
                "ineq_duals": out.solution.ineq_duals.as_slice(),
            },
        }));
    }
    if !out.status.applied() {
        return finalize(ctx, rec, &loads, None, started);
    }
    match extract_setpoints(&out.solution, &out.program) {
        Ok(sp) => rec.setpoints = sp,
        Err(e) => log::warn!("step {t}: {e}"),
    }
    let dv = out.program.layout.delta_v_rect(&out.solution.x);
    if let Some(k) = opts.verify_samples {
        let base = ChanceSpec::new(scn.beta, scn.v_min, scn.v_max).expect("validated scenario");
        rec.min_probability = verify_chance_satisfaction(&dv, &out.estimate, &base, k, step_seed(!scn.seed, t))
            .ok()
            .map(|p| p.into_iter().fold(1.0, f64::min));
    }
    let predicted = DVector::from_fn(n, |i, _| out.estimate.v_est()[i] + Complex64::new(dv[i], dv[n + i]));
    finalize(ctx, rec, &loads, Some(&predicted), started)
}

/// Realized power flow, violation flags and curtailment.
fn finalize(
    ctx: &StepContext<'_>,
    mut rec: StepRecord,
    loads: &DVector<Complex64>,
    predicted: Option<&DVector<Complex64>>,
    started: Instant,
) -> (StepRecord, Setpoints) {
    let scn = ctx.scn;
    if let Some((real, _)) = truth_flow(ctx, loads, &rec.setpoints) {
        rec.v_real = real.magnitudes();
        rec.violation = rec
            .v_real
            .iter()
            .map(|&v| v < scn.v_min - VIOLATION_TOL || v > scn.v_max + VIOLATION_TOL)
            .collect();
        if let Some(pred) = predicted {
            rec.predicted_gap = real.nodes.iter().zip(pred.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        }
    }
    rec.curtailed = rec.status.applied()
        && rec
            .setpoints
            .dg
            .iter()
            .zip(&rec.dg_available)
            .any(|(d, &s)| s - d.p.hypot(d.q) > CURTAIL_TOL);
    rec.wall_seconds = started.elapsed().as_secs_f64();
    let next = rec.setpoints.clone();
    (rec, next)
}

#![allow(dead_code)]

use std::path::PathBuf;

use gridopf::chance::{tighten_constraints, ChanceSpec, TightenedConstraintSet};
use gridopf::estimation::{estimate_state_with, generate_measurements, EstimationResult, EstimatorOptions};
use gridopf::grid::{build_isolated_admittance, AdmittanceMatrix, GridModel, TapVector};
use gridopf::opf::{
    assemble_program, solve_program, ConvexProgram, DgLimits, DgSetpoint, OpfSolution, ProgramOptions, Setpoints,
};
use gridopf::powerflow::{
    linearize, solve_powerflow_with, ComplexVoltageState, PowerFlowCase, PowerFlowOptions, SensitivityMatrix,
};
use gridopf::sim::{load_inputs, Overrides, Scenario, ScenarioFile};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn reference_scenario_path() -> PathBuf {
    data_dir().join("reference_scenario.json")
}

pub fn reference_grid_path() -> PathBuf {
    data_dir().join("reference_grid.json")
}

pub fn reference_scenario() -> Scenario {
    load_inputs(None, &reference_scenario_path(), &Overrides::default()).expect("reference scenario loads")
}

pub fn reference_grid() -> GridModel {
    GridModel::from_file(reference_grid_path()).expect("reference grid loads")
}

pub fn reference_file() -> ScenarioFile {
    let text = std::fs::read_to_string(reference_scenario_path()).unwrap();
    serde_json::from_str(&text).unwrap()
}

// ---------------------------------------------------------------- normal

/// Standard normal quantile by bisection on `Φ(x) = (1 + erf(x/√2)) / 2`.
pub fn quantile_by_erf_bisection(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------- Monte Carlo

/// Fraction of `V ~ N(mean, cov)` with `v_min ≤ |V| ≤ v_max`, using an
/// explicit 2×2 Cholesky factor per node.
pub fn band_probability(mean: Complex64, cov: Matrix2<f64>, v_min: f64, v_max: f64, n: usize, seed: u64) -> f64 {
    let a = cov[(0, 0)].max(0.0).sqrt();
    let l10 = if a > 0.0 { cov[(1, 0)] / a } else { 0.0 };
    let l11 = (cov[(1, 1)] - l10 * l10).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let re = mean.re + a * z0;
        let im = mean.im + l10 * z0 + l11 * z1;
        let m = re.hypot(im);
        if m >= v_min && m <= v_max {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

pub fn node_cov(est: &EstimationResult, i: usize) -> Matrix2<f64> {
    let n = est.n();
    let c = &est.covariance;
    Matrix2::new(c[(i, i)], c[(i, n + i)], c[(n + i, i)], c[(n + i, n + i)])
}

// ---------------------------------------------------------------- operating points

pub struct OperatingPoint {
    pub y: AdmittanceMatrix,
    pub state: ComplexVoltageState,
    pub injection: DVector<Complex64>,
    pub loads: DVector<Complex64>,
    pub setpoints: Setpoints,
}

/// Random loads, generation and tap on the reference feeder, solved exactly.
pub fn random_operating_point(scn: &Scenario, rng: &mut ChaCha8Rng) -> Option<(usize, OperatingPoint)> {
    let grid = &scn.grid;
    let t = rng.random_range(0..scn.horizon);
    let mut loads = scn.loads_at(t);
    for l in loads.iter_mut() {
        *l *= rng.random_range(0.5..1.5);
    }
    let dg = scn
        .dg_limits_at(t)
        .iter()
        .map(|l| {
            let p = rng.random_range(0.0..=1.0) * l.p_max * 0.8;
            let q_room = (l.s_max * l.s_max - p * p).max(0.0).sqrt().min(l.q_max);
            let q = rng.random_range(-1.0..=1.0) * q_room * 0.8;
            DgSetpoint { row: l.row, p, q }
        })
        .collect();
    let tf = grid.transformer.as_ref().expect("reference grid has a transformer");
    let steps = ((0.05 / tf.tap_step).round()) as i64;
    let tap = TapVector(std::array::from_fn(|_| 1.0 + rng.random_range(-steps..=steps) as f64 * tf.tap_step));
    let setpoints = Setpoints::new(tap, dg, grid.v_source);
    let y = build_isolated_admittance(grid);
    let case = PowerFlowCase::new(&loads, &setpoints.generation(grid.n()), tap, grid.v_source);
    let sol = solve_powerflow_with(grid, &y, &case, &PowerFlowOptions::default()).ok()?;
    Some((
        t,
        OperatingPoint {
            y,
            state: sol.state,
            injection: case.injection,
            loads,
            setpoints,
        },
    ))
}

/// One linearized OPF built the way the closed loop builds it.
pub struct Instance {
    pub program: ConvexProgram,
    pub solution: OpfSolution,
    pub estimate: EstimationResult,
    pub tightened: TightenedConstraintSet,
}

/// Everything an OPF instance needs apart from the chance spec and limits.
pub struct InstanceInputs {
    pub t: usize,
    pub op: OperatingPoint,
    pub estimate: EstimationResult,
    pub m: SensitivityMatrix,
    pub limits: Vec<DgLimits>,
    pub options: ProgramOptions,
}

impl InstanceInputs {
    pub fn program(&self, grid: &GridModel, spec: &ChanceSpec, limits: &[DgLimits]) -> Option<(ConvexProgram, TightenedConstraintSet)> {
        let tightened = tighten_constraints(&self.estimate, spec).ok()?;
        let program = assemble_program(grid, &self.m, &self.estimate, &tightened, limits, &self.op.setpoints, &self.options).ok()?;
        Some((program, tightened))
    }
}

pub fn random_inputs(scn: &Scenario, rng: &mut ChaCha8Rng) -> Option<InstanceInputs> {
    let (t, op) = random_operating_point(scn, rng)?;
    let grid = &scn.grid;
    let meas = generate_measurements(grid, &op.y, &scn.plan, &op.state, &op.injection, &op.loads, rng.random()).ok()?;
    let opts = EstimatorOptions {
        v_source: Some(op.setpoints.v_source),
        ..EstimatorOptions::default()
    };
    let estimate = estimate_state_with(grid, &op.y, &meas, &op.setpoints.tap, &opts).ok()?;
    let m = linearize(&op.y, &estimate.estimate).ok()?;
    Some(InstanceInputs {
        t,
        op,
        estimate,
        m,
        limits: scn.dg_limits_at(t),
        options: ProgramOptions {
            reactive_weight: scn.reactive_weight,
            ..ProgramOptions::default()
        },
    })
}

pub fn random_instance(scn: &Scenario, rng: &mut ChaCha8Rng) -> Option<Instance> {
    let inputs = random_inputs(scn, rng)?;
    let spec = ChanceSpec::new(0.95, scn.v_min, scn.v_max).unwrap();
    let (program, tightened) = inputs.program(&scn.grid, &spec, &inputs.limits)?;
    let solution = solve_program(&program);
    Some(Instance {
        program,
        solution,
        estimate: inputs.estimate,
        tightened,
    })
}

// ---------------------------------------------------------------- power-flow oracle

/// Node-phase Laplacian assembled directly from branch blocks, transformer
/// branches left out.
pub fn oracle_admittance(grid: &GridModel) -> DMatrix<Complex64> {
    let idx = grid.index();
    let mut y = DMatrix::zeros(idx.len(), idx.len());
    for (k, br) in grid.branches.iter().enumerate() {
        if grid.is_transformer_branch(k) {
            continue;
        }
        for (i, &pi) in br.phases.iter().enumerate() {
            for (j, &pj) in br.phases.iter().enumerate() {
                let w = br.admittance[(i, j)];
                let (fi, ti) = (idx.row(br.from, pi).unwrap(), idx.row(br.to, pi).unwrap());
                let (fj, tj) = (idx.row(br.from, pj).unwrap(), idx.row(br.to, pj).unwrap());
                y[(fi, fj)] += w;
                y[(ti, tj)] += w;
                y[(fi, tj)] -= w;
                y[(ti, fj)] -= w;
            }
        }
    }
    y
}

/// Worst absolute residual of the coupled power-flow equations.
pub fn oracle_mismatch(grid: &GridModel, y: &DMatrix<Complex64>, v: &ComplexVoltageState, case: &PowerFlowCase) -> f64 {
    let idx = grid.index();
    let vb = v.bus_vector();
    let current = y * &vb;
    let s: Vec<Complex64> = (0..vb.len()).map(|k| vb[k] * current[k].conj()).collect();
    let mut worst = 0.0_f64;
    for row in 3..vb.len() {
        if !idx.is_transformer_row(row) {
            worst = worst.max((s[row] - case.injection[row - 3]).norm());
        }
    }
    for (p, s_row) in idx.primary_rows().zip(idx.secondary_rows()) {
        let a = case.tap.0[idx.entry(p).phase.index()];
        worst = worst.max((vb[s_row] - vb[p] * a).norm());
        worst = worst.max((s[p] + s[s_row]).norm());
    }
    worst
}

// ---------------------------------------------------------------- ADMM oracle

pub struct AdmmResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
}

enum Cone {
    /// `z ≤ bound`, one row.
    HalfLine(f64),
    /// `‖z + offset‖² ≤ bound` over `offset.len()` rows.
    Ball(DVector<f64>, f64),
}

/// Consensus ADMM for `min cᵀx` s.t. `Ax = b`, `Fx = z`, `z ∈ K`, where every
/// inequality contributes its own block of `z` and `K` is a product of
/// half-lines and balls with exact projections. Requires inequalities that
/// are either purely linear or pure Gram forms.
pub fn admm_oracle(prog: &ConvexProgram, max_iter: usize, tol: f64) -> AdmmResult {
    let dim = prog.dim();
    let mut f_rows: Vec<DVector<f64>> = Vec::new();
    let mut cones = Vec::new();
    for q in &prog.inequalities {
        match &q.gram {
            None => {
                f_rows.push(q.lin.clone());
                cones.push(Cone::HalfLine(q.bound));
            }
            Some(g) => {
                assert!(q.lin.iter().all(|&v| v == 0.0), "mixed Gram and linear terms are not supported");
                for r in 0..g.rows.nrows() {
                    f_rows.push(g.rows.row(r).transpose());
                }
                cones.push(Cone::Ball(g.offset.clone(), q.bound));
            }
        }
    }
    let f = DMatrix::from_fn(f_rows.len(), dim, |i, j| f_rows[i][j]);
    let a = &prog.eq_matrix;
    let (m, p) = (f.nrows(), a.nrows());
    let mut rho = 1.0;
    let prox = 1e-6;
    let ftf = f.tr_mul(&f);
    let factor = |rho: f64| {
        let mut kkt = DMatrix::zeros(dim + p, dim + p);
        let mut top = &ftf * rho;
        for i in 0..dim {
            top[(i, i)] += prox;
        }
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&top);
        kkt.view_mut((dim, 0), (p, dim)).copy_from(a);
        kkt.view_mut((0, dim), (dim, p)).copy_from(&a.transpose());
        kkt.lu()
    };
    let mut lu = factor(rho);

    let project = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = v.clone();
        let mut r = 0;
        for c in &cones {
            match c {
                Cone::HalfLine(b) => {
                    out[r] = out[r].min(*b);
                    r += 1;
                }
                Cone::Ball(off, b) => {
                    let k = off.len();
                    let w = out.rows(r, k) + off;
                    let rad = b.max(0.0).sqrt();
                    let nw = w.norm();
                    if nw > rad {
                        let scaled = w * (rad / nw) - off;
                        out.rows_mut(r, k).copy_from(&scaled);
                    }
                    r += k;
                }
            }
        }
        out
    };

    let relax = 1.6;
    let mut x = DVector::zeros(dim);
    let mut z = project(&(&f * &x));
    let mut u = DVector::zeros(m);
    let mut rhs = DVector::zeros(dim + p);
    rhs.rows_mut(dim, p).copy_from(&prog.eq_rhs);
    let mut iterations = max_iter;
    for k in 0..max_iter {
        let top_rhs = -&prog.objective + f.tr_mul(&(&z - &u)) * rho + &x * prox;
        rhs.rows_mut(0, dim).copy_from(&top_rhs);
        let sol = lu.solve(&rhs).expect("ADMM system is nonsingular");
        x = sol.rows(0, dim).into_owned();
        let fx = &f * &x;
        let fx_hat = &fx * relax + &z * (1.0 - relax);
        let z_new = project(&(&fx_hat + &u));
        u += &fx_hat - &z_new;
        let dual = (f.tr_mul(&(&z_new - &z)) * rho).amax();
        z = z_new;
        let primal = (&fx - &z).amax();
        if primal < tol && dual < tol {
            iterations = k + 1;
            break;
        }
        // Residual balancing; `u` is scaled by 1/ρ so it is rescaled too.
        if k % 100 == 99 {
            let scale = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 && (1e-4..=1e6).contains(&(rho * scale)) {
                rho *= scale;
                u /= scale;
                lu = factor(rho);
            }
        }
    }
    let primal_residual = (&f * &x - &z).amax().max((a * &x - &prog.eq_rhs).amax());
    AdmmResult {
        objective: prog.objective.dot(&x),
        x,
        iterations,
        primal_residual,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vec2(c: Complex64) -> Vector2<f64> {
    Vector2::new(c.re, c.im)
}

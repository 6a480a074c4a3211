use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::measurement::{add_injection_hessian, add_model_hessian, check_location, injection_rows, model_rows};
use super::{EstimationError, EstimationResult, MeasuredValue, MeasurementSet};
use crate::grid::{build_isolated_admittance, AdmittanceMatrix, GridModel, TapVector};
use crate::linalg::{equilibrate, inf_norm, null_space_dim};
use crate::powerflow::{compute_injections, linearize, ComplexVoltageState};

const MAX_HALVINGS: usize = 20;
/// Bound on the extrapolated remaining distance when Gauss–Newton converges
/// only linearly, as on large-residual problems.
const LINEAR_TAIL: f64 = 1e-7;
/// Step ratios above this indicate linear rather than quadratic convergence.
const LINEAR_RATE: f64 = 0.1;
/// Previous step size below which Newton steps with residual curvature are tried.
const NEWTON_SWITCH: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct EstimatorOptions {
    pub max_iter: usize,
    /// Infinity-norm step size below which Gauss–Newton stops.
    pub tolerance: f64,
    /// Relative singular-value threshold of the equilibrated KKT matrix.
    pub rank_tol: f64,
    /// Substation voltage; `None` uses the grid's nominal source.
    pub v_source: Option<[Complex64; 3]>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tolerance: 1e-8,
            rank_tol: 1e-11,
            v_source: None,
        }
    }
}

pub fn estimate_state(
    grid: &GridModel,
    meas: &MeasurementSet,
    tap: &TapVector,
) -> Result<EstimationResult, EstimationError> {
    let y = build_isolated_admittance(grid);
    estimate_state_with(grid, &y, meas, tap, &EstimatorOptions::default())
}

/// Equality-constrained WLS Gauss–Newton over `x = [Re V; Im V]`.
///
/// Exact constraints are the transformer voltage ratio, the lossless
/// transformer power balance and every known injection. Each step solves
/// `[[G, Cᵀ], [C, 0]] [dx; λ] = [Hᵀ W r; -c]` with `G = Hᵀ W H`; the reported
/// covariance is the leading `2N × 2N` block of that matrix's inverse at the
/// final iterate, which equals `G⁻¹` when no constraints are present.
/// Close to the solution `G` also carries the residual and constraint
/// curvature, giving Newton steps on large-residual problems.
pub fn estimate_state_with(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    meas: &MeasurementSet,
    tap: &TapVector,
    opts: &EstimatorOptions,
) -> Result<EstimationResult, EstimationError> {
    let n = grid.n();
    let idx = grid.index();
    TapVector::new(tap.0)?;
    for (i, m) in meas.records.iter().enumerate() {
        check_location(grid, m.kind, m.location)
            .map_err(|reason| EstimationError::InvalidMeasurement { index: i, reason })?;
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            return Err(EstimationError::InvalidMeasurement {
                index: i,
                reason: format!("sigma must be positive, got {}", m.sigma),
            });
        }
        let shape_ok = matches!(
            (m.kind.is_complex(), m.value),
            (true, MeasuredValue::Complex(_)) | (false, MeasuredValue::Real(_))
        );
        if matches!(m.value, MeasuredValue::Real(v) if !(v >= 0.0)) {
            return Err(EstimationError::InvalidMeasurement {
                index: i,
                reason: "magnitude reading must be non-negative".into(),
            });
        }
        if !shape_ok {
            return Err(EstimationError::InvalidMeasurement {
                index: i,
                reason: "value type does not match kind".into(),
            });
        }
    }
    for &(row, _) in &meas.known_injections {
        if row < 3 || row >= n + 3 {
            return Err(EstimationError::Dimension {
                expected: n + 3,
                got: row,
            });
        }
    }

    let v_source = opts.v_source.unwrap_or(grid.v_source);
    let pairs: Vec<(usize, usize, f64)> = idx
        .primary_rows()
        .zip(idx.secondary_rows())
        .map(|(r1, r2)| (r1, r2, tap.0[idx.entry(r1).phase.index()]))
        .collect();

    let mut x = DVector::zeros(2 * n);
    for k in 0..n {
        let row = k + 3;
        let p = idx.entry(row).phase.index();
        let mut v = v_source[p];
        if idx.subsystem(row) == 2 {
            v *= tap.0[p];
        }
        x[k] = v.re;
        x[n + k] = v.im;
    }

    let mut last_step = f64::INFINITY;
    let mut prev_step = f64::INFINITY;
    let mut lambda: Option<DVector<f64>> = None;
    for iter in 0..opts.max_iter {
        let state = ComplexVoltageState::from_rect(v_source, &x)?;
        let sys = System::build(grid, y, meas, &pairs, &state)?;
        if iter == 0 {
            let (kkt, _) = sys.scaled_kkt(None);
            let null_dim = null_space_dim(&kkt, opts.rank_tol);
            if null_dim > 0 {
                return Err(EstimationError::Unobservable { null_dim });
            }
        }
        let (gn_dx, gn_lambda) = sys
            .step(None)
            .ok_or(EstimationError::Unobservable { null_dim: 1 })?;
        last_step = inf_norm(&gn_dx);
        if !last_step.is_finite() {
            break;
        }
        // Backtrack on an exact-penalty merit; multipliers bound the weight.
        let mu = 2.0 * inf_norm(&gn_lambda) + 1.0;
        let merit = |sys: &System| sys.objective() + mu * sys.c_val.lp_norm(1);
        let base = merit(&sys);
        log::trace!("gauss-newton iter {iter}: step {last_step:.3e}, merit {base:.12e}");
        let search = |x: &DVector<f64>, dx: &DVector<f64>| -> Option<DVector<f64>> {
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial = x + dx * t;
                if let Ok(state) = ComplexVoltageState::from_rect(v_source, &trial) {
                    if let Ok(next) = System::build(grid, y, meas, &pairs, &state) {
                        if merit(&next) <= base {
                            return Some(trial);
                        }
                    }
                }
                t *= 0.5;
            }
            None
        };
        // Near the solution the residual curvature is added, which restores
        // fast convergence on large-residual problems.
        let mut dx = gn_dx;
        let mut accepted = false;
        if last_step >= opts.tolerance {
            let newton = match (&lambda, prev_step < NEWTON_SWITCH) {
                (Some(l), true) => {
                    let curv = curvature(grid, y, meas, &pairs, &state, &sys, l);
                    sys.step(Some(&curv))
                }
                _ => None,
            };
            if let Some((ndx, nl)) = newton.filter(|(d, _)| d.iter().all(|v| v.is_finite())) {
                if let Some(trial) = search(&x, &ndx) {
                    last_step = inf_norm(&ndx);
                    x = trial;
                    lambda = Some(nl);
                    dx = ndx;
                    accepted = true;
                }
            }
            if !accepted {
                if let Some(trial) = search(&x, &dx) {
                    x = trial;
                    accepted = true;
                }
                lambda = Some(gn_lambda);
            }
        }
        let rate = last_step / prev_step;
        let stalled = last_step >= opts.tolerance
            && ((rate > LINEAR_RATE && rate < 1.0 && last_step * rate / (1.0 - rate) < LINEAR_TAIL) || (!accepted && last_step < LINEAR_TAIL));
        prev_step = last_step;
        if last_step < opts.tolerance || stalled {
            if !stalled && !accepted {
                x += &dx;
            }
            let state = ComplexVoltageState::from_rect(v_source, &x)?;
            let sys = System::build(grid, y, meas, &pairs, &state)?;
            let (kkt, d) = sys.scaled_kkt(None);
            let inv = kkt
                .try_inverse()
                .ok_or(EstimationError::Unobservable { null_dim: 1 })?;
            let dim = 2 * n;
            let mut cov = DMatrix::from_fn(dim, dim, |i, j| d[i] * inv[(i, j)] * d[j]);
            cov = (&cov + cov.transpose()) * 0.5;
            return Ok(EstimationResult {
                estimate: state,
                covariance: cov,
                iterations: iter + 1,
                objective: sys.objective(),
            });
        }
        if !accepted {
            x += &dx;
        }
    }
    Err(EstimationError::Diverged {
        iterations: opts.max_iter,
        last_step,
    })
}

/// Second-order part of the Lagrangian Hessian,
/// `-Σ r_i ∇²h_i / σ_i + Σ λ_j ∇²c_j`, in constraint row order.
fn curvature(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    meas: &MeasurementSet,
    pairs: &[(usize, usize, f64)],
    state: &ComplexVoltageState,
    sys: &System,
    lambda: &DVector<f64>,
) -> DMatrix<f64> {
    let n = state.n();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    let mut ri = 0;
    for m in &meas.records {
        let comps = if m.kind.is_complex() { 2 } else { 1 };
        let w: Vec<f64> = (0..comps).map(|c| -sys.r[ri + c] / m.sigma).collect();
        add_model_hessian(grid, y, m.kind, m.location, state, &w, &mut out);
        ri += comps;
    }
    let mut ci = 0;
    for &(r1, r2, _) in pairs {
        // Voltage-ratio rows are linear.
        ci += 2;
        add_injection_hessian(y, r1, n, lambda[ci], lambda[ci + 1], &mut out);
        add_injection_hessian(y, r2, n, lambda[ci], lambda[ci + 1], &mut out);
        ci += 2;
    }
    for &(row, _) in &meas.known_injections {
        add_injection_hessian(y, row, n, lambda[ci], lambda[ci + 1], &mut out);
        ci += 2;
    }
    out
}

/// Linearized measurement model and constraints at one iterate.
struct System {
    /// Weighted Jacobian `W^{1/2} H`.
    h: DMatrix<f64>,
    /// Weighted residual `W^{1/2} (z - h(x))`.
    r: DVector<f64>,
    c_jac: DMatrix<f64>,
    c_val: DVector<f64>,
}

impl System {
    fn build(
        grid: &GridModel,
        y: &AdmittanceMatrix,
        meas: &MeasurementSet,
        pairs: &[(usize, usize, f64)],
        state: &ComplexVoltageState,
    ) -> Result<Self, EstimationError> {
        let n = state.n();
        let sens = linearize(y, state)?.matrix;
        let mut h_rows: Vec<DVector<f64>> = Vec::new();
        let mut r = Vec::new();
        for m in &meas.records {
            let (vals, rows) = model_rows(grid, y, &sens, m.kind, m.location, state);
            let z = match m.value {
                MeasuredValue::Real(v) => vec![v],
                MeasuredValue::Complex(v) => vec![v.re, v.im],
            };
            for ((zv, hv), row) in z.into_iter().zip(vals).zip(rows) {
                r.push((zv - hv) / m.sigma);
                h_rows.push(row / m.sigma);
            }
        }
        let s = compute_injections(y, state)?.0;
        let mut c_rows: Vec<DVector<f64>> = Vec::new();
        let mut c_val = Vec::new();
        for &(r1, r2, a) in pairs {
            let (k1, k2) = (r1 - 3, r2 - 3);
            let dv = state.nodes[k2] - state.nodes[k1] * a;
            let mut re = DVector::zeros(2 * n);
            re[k2] = 1.0;
            re[k1] = -a;
            let mut im = DVector::zeros(2 * n);
            im[n + k2] = 1.0;
            im[n + k1] = -a;
            c_rows.push(re);
            c_val.push(dv.re);
            c_rows.push(im);
            c_val.push(dv.im);

            let j1 = injection_rows(&sens, r1, n);
            let j2 = injection_rows(&sens, r2, n);
            let ds = s[r1] + s[r2];
            c_rows.push(&j1[0] + &j2[0]);
            c_val.push(ds.re);
            c_rows.push(&j1[1] + &j2[1]);
            c_val.push(ds.im);
        }
        for &(row, value) in &meas.known_injections {
            let j = injection_rows(&sens, row, n);
            let d = s[row] - value;
            c_rows.push(j[0].clone());
            c_val.push(d.re);
            c_rows.push(j[1].clone());
            c_val.push(d.im);
        }
        let stack = |rows: &[DVector<f64>]| {
            DMatrix::from_fn(rows.len(), 2 * n, |i, j| rows[i][j])
        };
        Ok(Self {
            h: stack(&h_rows),
            r: DVector::from_vec(r),
            c_jac: stack(&c_rows),
            c_val: DVector::from_vec(c_val),
        })
    }

    /// Equilibrated KKT matrix and its scaling `d`; the unscaled matrix is
    /// `diag(d)⁻¹ K diag(d)⁻¹`. `curvature` is added to the Gauss–Newton block.
    fn scaled_kkt(&self, curvature: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DVector<f64>) {
        let nx = self.h.ncols();
        let nc = self.c_jac.nrows();
        let mut k = DMatrix::zeros(nx + nc, nx + nc);
        let mut top = self.h.transpose() * &self.h;
        if let Some(c) = curvature {
            top += c;
        }
        k.view_mut((0, 0), (nx, nx)).copy_from(&top);
        k.view_mut((nx, 0), (nc, nx)).copy_from(&self.c_jac);
        k.view_mut((0, nx), (nx, nc)).copy_from(&self.c_jac.transpose());
        let d = equilibrate(&k);
        let scaled = DMatrix::from_fn(nx + nc, nx + nc, |i, j| d[i] * k[(i, j)] * d[j]);
        (scaled, d)
    }

    /// State step and constraint multipliers.
    fn step(&self, curvature: Option<&DMatrix<f64>>) -> Option<(DVector<f64>, DVector<f64>)> {
        let nx = self.h.ncols();
        let (kkt, d) = self.scaled_kkt(curvature);
        let sol = kkt.lu().solve(&self.rhs().component_mul(&d))?.component_mul(&d);
        Some((sol.rows(0, nx).into_owned(), sol.rows(nx, sol.len() - nx).into_owned()))
    }

    fn rhs(&self) -> DVector<f64> {
        let nx = self.h.ncols();
        let nc = self.c_jac.nrows();
        let mut b = DVector::zeros(nx + nc);
        b.rows_mut(0, nx).copy_from(&(self.h.transpose() * &self.r));
        b.rows_mut(nx, nc).copy_from(&(-&self.c_val));
        b
    }

    fn objective(&self) -> f64 {
        self.r.norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{
        evaluate, generate_measurements, Location, Measurement, MeasurementKind, MeasurementPlan, NoiseShape,
        Placement,
    };
    use crate::grid::fixtures::small_tf;
    use crate::grid::Phase;
    use crate::linalg::min_eigenvalue;
    use crate::powerflow::{solve_powerflow, PowerFlowCase};

    fn truth(tap: [f64; 3]) -> (GridModel, ComplexVoltageState, DVector<Complex64>, DVector<Complex64>) {
        let g = small_tf();
        let idx = g.index();
        let loads = DVector::from_fn(g.n(), |k, _| {
            if idx.is_transformer_row(k + 3) || k == 1 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.1 + 0.01 * k as f64, 0.03)
            }
        });
        let case = PowerFlowCase::new(&loads, &DVector::zeros(g.n()), TapVector(tap), g.v_source);
        let sol = solve_powerflow(&g, &case).unwrap();
        (g, sol.state, case.injection, loads)
    }

    fn sparse_plan() -> MeasurementPlan {
        MeasurementPlan {
            placements: vec![
                Placement {
                    kind: MeasurementKind::VoltagePhasor,
                    location: Location::Node(15),
                    sigma: 0.005,
                },
                Placement {
                    kind: MeasurementKind::VoltageMagnitude,
                    location: Location::Node(4),
                    sigma: 0.01,
                },
                Placement {
                    kind: MeasurementKind::BranchCurrentPhasor,
                    location: Location::Branch { branch: 3, phase: Phase::A },
                    sigma: 0.02,
                },
            ],
            pseudo_sigma_frac: 0.5,
            pseudo_noise: NoiseShape::Gaussian,
        }
    }

    #[test]
    fn full_phasor_set_recovers_truth() {
        let (g, truth, _, _) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let records = (0..g.n())
            .map(|k| Measurement {
                kind: MeasurementKind::VoltagePhasor,
                location: Location::Node(k + 3),
                value: evaluate(&g, &y, MeasurementKind::VoltagePhasor, Location::Node(k + 3), &truth),
                sigma: 1e-6,
            })
            .collect();
        let set = MeasurementSet {
            records,
            known_injections: vec![],
        };
        let est = estimate_state(&g, &set, &TapVector::NOMINAL).unwrap();
        for k in 0..g.n() {
            assert!((est.v_est()[k] - truth.nodes[k]).norm() < 1e-10);
        }
        let max_diag = (0..2 * g.n()).map(|i| est.covariance[(i, i)]).fold(0.0, f64::max);
        assert!(max_diag > 0.0 && max_diag < 1e-11, "{max_diag}");
    }

    #[test]
    fn noiseless_sparse_set_recovers_truth_off_nominal_tap() {
        let tap = [1.0375, 0.975, 1.0125];
        let (g, truth, inj, loads) = truth(tap);
        let y = build_isolated_admittance(&g);
        let mut plan = sparse_plan();
        for p in &mut plan.placements {
            p.sigma = 0.0;
        }
        plan.pseudo_sigma_frac = 0.0;
        let mut set = generate_measurements(&g, &y, &plan, &truth, &inj, &loads, 3).unwrap();
        for m in &mut set.records {
            m.sigma = 0.01;
        }
        let est = estimate_state(&g, &set, &TapVector(tap)).unwrap();
        for k in 0..g.n() {
            assert!((est.v_est()[k] - truth.nodes[k]).norm() < 1e-9, "node {k}");
        }
        assert!(est.objective < 1e-15);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 11).unwrap();
        let est = estimate_state(&g, &set, &TapVector::NOMINAL).unwrap();
        let c = &est.covariance;
        assert!((c - c.transpose()).abs().max() < 1e-15);
        assert!(min_eigenvalue(c) > -1e-10);
    }

    #[test]
    fn deterministic_given_measurements() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 5).unwrap();
        let a = estimate_state(&g, &set, &TapVector::NOMINAL).unwrap();
        let b = estimate_state(&g, &set, &TapVector::NOMINAL).unwrap();
        assert_eq!(a.v_est_rect(), b.v_est_rect());
        assert_eq!(a.covariance, b.covariance);
    }

    #[test]
    fn tighter_sigma_shrinks_trace() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 5).unwrap();
        let base = estimate_state(&g, &set, &TapVector::NOMINAL).unwrap().trace();
        for i in 0..set.records.len() {
            let mut tighter = set.clone();
            tighter.records[i].sigma *= 0.5;
            let t = estimate_state(&g, &tighter, &TapVector::NOMINAL).unwrap().trace();
            assert!(t <= base * (1.0 + 1e-9), "record {i}: {t} > {base}");
        }
    }

    #[test]
    fn missing_pseudo_measurements_make_system_unobservable() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let mut set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 5).unwrap();
        set.records.retain(|m| m.kind != MeasurementKind::LoadPseudo);
        assert!(matches!(
            estimate_state(&g, &set, &TapVector::NOMINAL),
            Err(EstimationError::Unobservable { null_dim }) if null_dim > 0
        ));
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let mut set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 5).unwrap();
        set.records[1].sigma = 0.0;
        assert!(matches!(
            estimate_state(&g, &set, &TapVector::NOMINAL),
            Err(EstimationError::InvalidMeasurement { index: 1, .. })
        ));
    }

    #[test]
    fn negative_magnitude_reading_rejected() {
        let (g, truth, inj, loads) = truth([1.0; 3]);
        let y = build_isolated_admittance(&g);
        let mut set = generate_measurements(&g, &y, &sparse_plan(), &truth, &inj, &loads, 5).unwrap();
        set.records[1].value = MeasuredValue::Real(-0.01);
        assert!(matches!(
            estimate_state(&g, &set, &TapVector::NOMINAL),
            Err(EstimationError::InvalidMeasurement { index: 1, .. })
        ));
    }
}

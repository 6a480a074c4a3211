use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{compute_injections, linearize, ComplexVoltageState, PowerFlowError};
use crate::grid::{build_isolated_admittance, AdmittanceMatrix, GridModel, TapVector};
use crate::linalg::inf_norm;

#[derive(Clone, Debug)]
pub struct PowerFlowOptions {
    pub max_iter: usize,
    /// Infinity-norm mismatch target, p.u.
    pub tolerance: f64,
    /// Magnitude below which an iterate counts as collapsed.
    pub min_voltage: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-10,
            min_voltage: 0.3,
        }
    }
}

/// Inputs of one exact power-flow solve.
#[derive(Clone, Debug)]
pub struct PowerFlowCase {
    /// Specified net injection (generation minus load) per non-source
    /// node-phase. Entries at transformer terminals are ignored.
    pub injection: DVector<Complex64>,
    pub tap: TapVector,
    pub v_source: [Complex64; 3],
}

impl PowerFlowCase {
    pub fn new(
        loads: &DVector<Complex64>,
        generation: &DVector<Complex64>,
        tap: TapVector,
        v_source: [Complex64; 3],
    ) -> Self {
        Self {
            injection: generation - loads,
            tap,
            v_source,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub state: ComplexVoltageState,
    pub iterations: usize,
    /// Final infinity-norm mismatch, p.u.
    pub residual: f64,
}

pub fn solve_powerflow(grid: &GridModel, case: &PowerFlowCase) -> Result<PowerFlowSolution, PowerFlowError> {
    let y = build_isolated_admittance(grid);
    solve_powerflow_with(grid, &y, case, &PowerFlowOptions::default())
}

/// Newton–Raphson in rectangular coordinates on the isolated subsystems,
/// coupled through `V_tf2 = diag(a) V_tf1` and `S_tf1 + S_tf2 = 0`.
///
/// Unknowns are `[Re V; Im V]`. Equation `k` / `N + k` is the active /
/// reactive mismatch at node `k`, except at transformer terminals where the
/// primary rows hold the voltage ratio and the secondary rows the power
/// balance.
pub fn solve_powerflow_with(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    case: &PowerFlowCase,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = grid.n();
    if case.injection.len() != n {
        return Err(PowerFlowError::Dimension {
            expected: n,
            got: case.injection.len(),
        });
    }
    crate::grid::TapVector::new(case.tap.0)?;
    let idx = grid.index();
    let pairs: Vec<(usize, usize, f64)> = idx
        .primary_rows()
        .zip(idx.secondary_rows())
        .map(|(r1, r2)| (r1 - 3, r2 - 3, case.tap.0[idx.entry(r1).phase.index()]))
        .collect();

    let mut x = flat_start(grid, case);
    let mut residual = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let state = ComplexVoltageState::from_rect(case.v_source, &x)?;
        let f = mismatch(y, &state, case, &pairs)?;
        residual = inf_norm(&f);
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tolerance {
            return Ok(PowerFlowSolution {
                state,
                iterations: iter,
                residual,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let jac = jacobian(y, &state, &pairs)?;
        let dx = jac.lu().solve(&(-f)).ok_or(PowerFlowError::Diverged {
            iterations: iter,
            residual,
        })?;
        x += dx;
        for k in 0..n {
            let mag = x[k].hypot(x[n + k]);
            if mag < opts.min_voltage {
                return Err(PowerFlowError::LowVoltage {
                    row: k + 3,
                    magnitude: mag,
                });
            }
        }
    }
    Err(PowerFlowError::Diverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Source voltages propagated through the nominal-side tap ratio.
fn flat_start(grid: &GridModel, case: &PowerFlowCase) -> DVector<f64> {
    let idx = grid.index();
    let n = grid.n();
    let mut x = DVector::zeros(2 * n);
    for k in 0..n {
        let row = k + 3;
        let p = idx.entry(row).phase.index();
        let mut v = case.v_source[p];
        if idx.subsystem(row) == 2 {
            v *= case.tap.0[p];
        }
        x[k] = v.re;
        x[n + k] = v.im;
    }
    x
}

fn mismatch(
    y: &AdmittanceMatrix,
    state: &ComplexVoltageState,
    case: &PowerFlowCase,
    pairs: &[(usize, usize, f64)],
) -> Result<DVector<f64>, PowerFlowError> {
    let n = state.n();
    let s = compute_injections(y, state)?.0;
    let mut f = DVector::zeros(2 * n);
    for k in 0..n {
        let d = s[k + 3] - case.injection[k];
        f[k] = d.re;
        f[n + k] = d.im;
    }
    for &(k1, k2, a) in pairs {
        let dv = state.nodes[k2] - state.nodes[k1] * a;
        f[k1] = dv.re;
        f[n + k1] = dv.im;
        let ds = s[k1 + 3] + s[k2 + 3];
        f[k2] = ds.re;
        f[n + k2] = ds.im;
    }
    Ok(f)
}

fn jacobian(
    y: &AdmittanceMatrix,
    state: &ComplexVoltageState,
    pairs: &[(usize, usize, f64)],
) -> Result<DMatrix<f64>, PowerFlowError> {
    let n = state.n();
    let nb = n + 3;
    let m = linearize(y, state)?.matrix;
    // Drop source rows and columns.
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        for c in 0..n {
            j[(k, c)] = m[(k + 3, c + 3)];
            j[(k, n + c)] = m[(k + 3, nb + c + 3)];
            j[(n + k, c)] = m[(nb + k + 3, c + 3)];
            j[(n + k, n + c)] = m[(nb + k + 3, nb + c + 3)];
        }
    }
    for &(k1, k2, a) in pairs {
        let p_sum = j.row(k1) + j.row(k2);
        let q_sum = j.row(n + k1) + j.row(n + k2);
        j.set_row(k2, &p_sum);
        j.set_row(n + k2, &q_sum);
        j.row_mut(k1).fill(0.0);
        j.row_mut(n + k1).fill(0.0);
        j[(k1, k2)] = 1.0;
        j[(k1, k1)] = -a;
        j[(n + k1, n + k2)] = 1.0;
        j[(n + k1, n + k1)] = -a;
    }
    Ok(j)
}

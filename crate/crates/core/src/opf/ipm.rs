use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::program::{ConvexProgram, IneqKind, Inequality};
use crate::linalg::inf_norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::MaxIter => "max_iter",
        })
    }
}

/// Infinity norms of the first-order optimality conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `c + Aᵀy + Σ z_i ∇g_i`.
    pub stationarity: f64,
    /// `Ax - b` and positive parts of `g`.
    pub primal: f64,
    /// Negative parts of `z`.
    pub dual: f64,
    /// `z_i g_i`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct IpmOptions {
    pub max_iter: usize,
    /// Residual target for early termination.
    pub tolerance: f64,
    /// Residual level at which a stalled run is still reported optimal.
    pub accept: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tolerance: 1e-9,
            accept: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpfSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub status: SolveStatus,
    pub iterations: usize,
    pub eq_duals: DVector<f64>,
    /// One multiplier per inequality, in program order.
    pub ineq_duals: DVector<f64>,
    /// Optimal value of `max_i g_i` from the feasibility phase, when run.
    pub phase_one_slack: Option<f64>,
}

impl OpfSolution {
    /// Largest multiplier on any voltage constraint.
    pub fn max_voltage_dual(&self, prog: &ConvexProgram) -> f64 {
        prog.inequalities
            .iter()
            .zip(self.ineq_duals.iter())
            .filter(|(q, _)| q.kind.is_voltage())
            .map(|(_, &z)| z)
            .fold(0.0, f64::max)
    }
}

pub fn solve_program(prog: &ConvexProgram) -> OpfSolution {
    solve_program_with(prog, &IpmOptions::default())
}

/// Primal-dual interior point with Mehrotra predictor-corrector steps.
///
/// Starts from `x = 0` (no change). When that run fails a feasibility phase
/// minimizes `t` subject to `g_i(x) ≤ t`; a positive optimum certifies
/// infeasibility, otherwise the main phase restarts from its point.
pub fn solve_program_with(prog: &ConvexProgram, opts: &IpmOptions) -> OpfSolution {
    let dim = prog.dim();
    let x0 = DVector::zeros(dim);
    let first = interior_point(&prog.objective, &prog.eq_matrix, &prog.eq_rhs, &prog.inequalities, &x0, opts);
    if first.residuals.max() <= opts.accept {
        return first.into_solution(prog, SolveStatus::Optimal, None);
    }
    log::debug!(
        "main phase stopped at residual {:.3e} after {} iterations; running feasibility phase",
        first.residuals.max(),
        first.iterations
    );

    let mut c1 = DVector::zeros(dim + 1);
    c1[dim] = 1.0;
    let a1 = prog.eq_matrix.clone().insert_column(dim, 0.0);
    let mut g1: Vec<Inequality> = prog
        .inequalities
        .iter()
        .map(|q| {
            let mut w = q.widen(1);
            w.lin[dim] = -1.0;
            w
        })
        .collect();
    let mut floor = DVector::zeros(dim + 1);
    floor[dim] = -1.0;
    g1.push(Inequality {
        kind: IneqKind::PhaseOneFloor,
        lin: floor,
        gram: None,
        bound: 1.0,
    });
    let t0 = prog.inequalities.iter().map(|q| q.value(&x0)).fold(0.0, f64::max) + 1.0;
    let mut x1 = DVector::zeros(dim + 1);
    x1[dim] = t0;
    let phase1 = interior_point(&c1, &a1, &prog.eq_rhs, &g1, &x1, opts);
    let t_star = phase1.x[dim];
    let p1_ok = phase1.residuals.max() <= opts.accept;
    if p1_ok && t_star > opts.accept {
        let mut sol = first.into_solution(prog, SolveStatus::Infeasible, Some(t_star));
        sol.x = phase1.x.rows(0, dim).into_owned();
        sol.objective = prog.objective.dot(&sol.x);
        return sol;
    }
    let start = phase1.x.rows(0, dim).into_owned();
    let second = interior_point(&prog.objective, &prog.eq_matrix, &prog.eq_rhs, &prog.inequalities, &start, opts);
    let status = if second.residuals.max() <= opts.accept {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    let best = if second.residuals.max() <= first.residuals.max() {
        second
    } else {
        first
    };
    best.into_solution(prog, status, Some(t_star))
}

struct Run {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    residuals: KktResiduals,
    iterations: usize,
}

impl Run {
    fn into_solution(self, prog: &ConvexProgram, status: SolveStatus, phase_one_slack: Option<f64>) -> OpfSolution {
        OpfSolution {
            objective: prog.objective.dot(&self.x),
            x: self.x,
            residuals: self.residuals,
            status,
            iterations: self.iterations,
            eq_duals: self.y,
            ineq_duals: self.z,
            phase_one_slack,
        }
    }
}

fn residuals(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, KktResiduals) {
    let r_d = c + a.tr_mul(y) + jac.tr_mul(z);
    let eq = if a.nrows() > 0 { inf_norm(&(a * x - b)) } else { 0.0 };
    let ineq = g.iter().fold(0.0f64, |m, &v| m.max(v));
    let res = KktResiduals {
        stationarity: inf_norm(&r_d),
        primal: eq.max(ineq),
        dual: z.iter().fold(0.0f64, |m, &v| m.max(-v)),
        complementarity: z.iter().zip(g.iter()).fold(0.0f64, |m, (zi, gi)| m.max((zi * gi).abs())),
    };
    (r_d, res)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

fn interior_point(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ineqs: &[Inequality],
    x0: &DVector<f64>,
    opts: &IpmOptions,
) -> Run {
    let n = c.len();
    let me = a.nrows();
    let mi = ineqs.len();
    let mut x = x0.clone();
    let mut y = DVector::zeros(me);
    let eval = |x: &DVector<f64>| {
        let g = DVector::from_iterator(mi, ineqs.iter().map(|q| q.value(x)));
        let mut jac = DMatrix::zeros(mi, n);
        for (i, q) in ineqs.iter().enumerate() {
            jac.set_row(i, &q.gradient(x).transpose());
        }
        (g, jac)
    };
    let (g0, _) = eval(&x);
    let mut s = g0.map(|v| (-v).max(1.0));
    let mut z = DVector::from_element(mi, 1.0);

    let mut best: Option<Run> = None;
    for iter in 0..=opts.max_iter {
        let (g, jac) = eval(&x);
        let (r_d, res) = residuals(c, a, b, &g, &jac, &x, &y, &z);
        let better = best.as_ref().is_none_or(|r| res.max() < r.residuals.max());
        if better {
            best = Some(Run {
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
                residuals: res,
                iterations: iter,
            });
        }
        if res.max() <= opts.tolerance || iter == opts.max_iter {
            break;
        }
        let r_p = if me > 0 { a * &x - b } else { DVector::zeros(0) };
        let r_g = &g + &s;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };

        let mut h = DMatrix::zeros(n, n);
        for (q, &zi) in ineqs.iter().zip(z.iter()) {
            q.add_hessian(zi, &mut h);
        }
        let w = z.component_div(&s);
        for (i, row) in jac.row_iter().enumerate() {
            let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
            for &(a, va) in &nz {
                for &(b, vb) in &nz {
                    h[(a, b)] += w[i] * va * vb;
                }
            }
        }
        let mut k = DMatrix::zeros(n + me, n + me);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        if me > 0 {
            k.view_mut((n, 0), (me, n)).copy_from(a);
            k.view_mut((0, n), (n, me)).copy_from(&a.transpose());
        }
        // Tiny regularization keeps the factorization defined on flat directions.
        for i in 0..n {
            k[(i, i)] += 1e-12;
        }
        for i in n..n + me {
            k[(i, i)] -= 1e-12;
        }
        let lu = k.lu();

        let solve = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // Δz = S⁻¹(-r_c + Z r_g + Z J Δx), Δs = -r_g - J Δx.
            let t = (-r_c + z.component_mul(&r_g)).component_div(&s);
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - jac.tr_mul(&t)));
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&r_p));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let jdx = &jac * &dx;
            let ds = -&r_g - &jdx;
            let dz = &t + z.component_mul(&jdx).component_div(&s);
            if dx.iter().chain(dz.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            Some((dx, dy, ds, dz))
        };

        let Some((_, _, ds_a, dz_a)) = solve(&s.component_mul(&z)) else {
            break;
        };
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let r_c = s.component_mul(&z) + ds_a.component_mul(&dz_a) - DVector::from_element(mi, sigma * mu);
        let Some((dx, dy, ds, dz)) = solve(&r_c) else {
            break;
        };
        let step = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * step;
        y += &dy * step;
        s += &ds * step;
        z += &dz * step;
        s.iter_mut().for_each(|v| *v = v.max(1e-300));
        z.iter_mut().for_each(|v| *v = v.max(1e-300));
        if inf_norm(&x) > 1e10 {
            break;
        }
    }
    best.expect("at least one iterate is recorded")
}

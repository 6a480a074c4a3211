use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use super::{OpfError, Setpoints};
use crate::chance::TightenedConstraintSet;
use crate::estimation::{EstimationResult, Location, MeasurementKind};
use crate::grid::{AdmittanceMatrix, GridModel, Phase};
use crate::powerflow::SensitivityMatrix;

/// Bounds at or below this width are treated as fixed values.
const DEGENERATE: f64 = 1e-9;
/// Slack allowed when checking the previous operating point against limits.
const PREV_TOL: f64 = 1e-6;

/// Absolute operating limits of one controllable generator node-phase, p.u.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DgLimits {
    /// Admittance row of the node-phase.
    pub row: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramOptions {
    /// Let the substation voltage move.
    pub free_source: bool,
    /// Weight of source reactive power relative to active power.
    pub reactive_weight: f64,
    /// Penalty per p.u. of voltage-constraint violation; `None` keeps the
    /// voltage constraints hard.
    pub soft_penalty: Option<f64>,
}

impl Default for ProgramOptions {
    fn default() -> Self {
        Self {
            free_source: false,
            reactive_weight: 1.0,
            soft_penalty: None,
        }
    }
}

/// Column map of the decision vector.
///
/// Order: `[Re ΔV_src?; Re ΔV; Im ΔV_src?; Im ΔV; ΔP_src; ΔP; ΔQ_src; ΔQ;
/// Δa?; s?]`, where the source voltage block exists only when the source is
/// free, `Δa` only with a transformer and `s` (one per node-phase) only in
/// soft mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariableLayout {
    pub n: usize,
    pub free_source: bool,
    pub has_tap: bool,
    pub soft: bool,
    labels: Vec<String>,
}

impl VariableLayout {
    fn new(grid: &GridModel, free_source: bool, soft: bool) -> Self {
        Self {
            n: grid.n(),
            free_source,
            has_tap: grid.transformer.is_some(),
            soft,
            labels: (0..grid.index().len()).map(|r| grid.row_label(r)).collect(),
        }
    }

    fn vblock(&self) -> usize {
        self.n + if self.free_source { 3 } else { 0 }
    }

    /// Column of `Re ΔV` at admittance row `row`, if it is a variable.
    pub fn v_re(&self, row: usize) -> Option<usize> {
        match (row < 3, self.free_source) {
            (true, false) => None,
            (true, true) => Some(row),
            (false, true) => Some(row),
            (false, false) => Some(row - 3),
        }
    }

    pub fn v_im(&self, row: usize) -> Option<usize> {
        self.v_re(row).map(|c| c + self.vblock())
    }

    fn s_start(&self) -> usize {
        2 * self.vblock()
    }

    pub fn p(&self, row: usize) -> usize {
        self.s_start() + row
    }

    pub fn q(&self, row: usize) -> usize {
        self.s_start() + self.n + 3 + row
    }

    pub fn tap(&self, phase: usize) -> Option<usize> {
        self.has_tap.then(|| self.s_start() + 2 * (self.n + 3) + phase)
    }

    pub fn slack(&self, node: usize) -> Option<usize> {
        let base = self.s_start() + 2 * (self.n + 3) + if self.has_tap { 3 } else { 0 };
        self.soft.then_some(base + node)
    }

    pub fn len(&self) -> usize {
        self.s_start() + 2 * (self.n + 3) + if self.has_tap { 3 } else { 0 } + if self.soft { self.n } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[Re ΔV; Im ΔV]` over non-source node-phases.
    pub fn delta_v_rect(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                x[self.v_re(i + 3).unwrap()]
            } else {
                x[self.v_im(i - n + 3).unwrap()]
            }
        })
    }

    /// Source voltage change, zero when the source is fixed.
    pub fn delta_v_source(&self, x: &DVector<f64>) -> [Complex64; 3] {
        std::array::from_fn(|r| match (self.v_re(r), self.v_im(r)) {
            (Some(a), Some(b)) => Complex64::new(x[a], x[b]),
            _ => Complex64::new(0.0, 0.0),
        })
    }

    /// Variable names, in column order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.len()];
        for r in 0..self.n + 3 {
            if let (Some(a), Some(b)) = (self.v_re(r), self.v_im(r)) {
                names[a] = format!("dv_re[{}]", self.labels[r]);
                names[b] = format!("dv_im[{}]", self.labels[r]);
            }
            names[self.p(r)] = format!("dp[{}]", self.labels[r]);
            names[self.q(r)] = format!("dq[{}]", self.labels[r]);
        }
        for (p, ph) in ["a", "b", "c"].iter().enumerate() {
            if let Some(c) = self.tap(p) {
                names[c] = format!("da[{ph}]");
            }
        }
        for k in 0..self.n {
            if let Some(c) = self.slack(k) {
                names[c] = format!("slack[{}]", self.labels[k + 3]);
            }
        }
        names
    }
}

/// `Σ_k (rows_k · x + offset_k)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramForm {
    pub rows: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IneqKind {
    TapLower { phase: usize },
    TapUpper { phase: usize },
    PMin { row: usize },
    PMax { row: usize },
    QMin { row: usize },
    QMax { row: usize },
    Apparent { row: usize },
    Circle { node: usize, corner: usize },
    HalfPlane { node: usize, corner: usize },
    Thermal { branch: usize, phase: Phase },
    SlackNonNegative { node: usize },
    PhaseOneFloor,
}

impl IneqKind {
    pub fn is_voltage(self) -> bool {
        matches!(self, Self::Circle { .. } | Self::HalfPlane { .. })
    }
}

/// `gram(x) + lin · x ≤ bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Inequality {
    pub kind: IneqKind,
    pub lin: DVector<f64>,
    pub gram: Option<GramForm>,
    pub bound: f64,
}

impl Inequality {
    fn linear(kind: IneqKind, dim: usize, terms: &[(usize, f64)], bound: f64) -> Self {
        let mut lin = DVector::zeros(dim);
        for &(c, v) in terms {
            lin[c] += v;
        }
        Self {
            kind,
            lin,
            gram: None,
            bound,
        }
    }

    /// Constraint value `g(x)`, feasible when `≤ 0`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.lin.dot(x) - self.bound;
        if let Some(g) = &self.gram {
            v += (&g.rows * x + &g.offset).norm_squared();
        }
        v
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            None => self.lin.clone(),
            Some(g) => &self.lin + g.rows.tr_mul(&(&g.rows * x + &g.offset)) * 2.0,
        }
    }

    /// `h += weight · ∇²g`.
    pub fn add_hessian(&self, weight: f64, h: &mut DMatrix<f64>) {
        let Some(g) = &self.gram else {
            return;
        };
        // Gram rows touch few variables; skip the structural zeros.
        let cols: Vec<usize> = (0..g.rows.ncols())
            .filter(|&c| g.rows.column(c).iter().any(|&v| v != 0.0))
            .collect();
        for &i in &cols {
            for &j in &cols {
                let dot: f64 = g.rows.column(i).dot(&g.rows.column(j));
                h[(i, j)] += 2.0 * weight * dot;
            }
        }
    }

    /// Copy with `extra` trailing zero columns.
    pub(crate) fn widen(&self, extra: usize) -> Self {
        let dim = self.lin.len() + extra;
        let mut lin = DVector::zeros(dim);
        lin.rows_mut(0, self.lin.len()).copy_from(&self.lin);
        let gram = self.gram.as_ref().map(|g| {
            let mut rows = DMatrix::zeros(g.rows.nrows(), dim);
            rows.view_mut((0, 0), g.rows.shape()).copy_from(&g.rows);
            GramForm {
                rows,
                offset: g.offset.clone(),
            }
        });
        Self {
            kind: self.kind,
            lin,
            gram,
            bound: self.bound,
        }
    }
}

/// Convex QCQP with a linear objective.
#[derive(Clone, Debug)]
pub struct ConvexProgram {
    pub layout: VariableLayout,
    pub objective: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub eq_labels: Vec<String>,
    pub inequalities: Vec<Inequality>,
    /// Equality rows removed as linearly dependent.
    pub dropped_equalities: usize,
    pub dg_limits: Vec<DgLimits>,
    pub tap_bounds: (f64, f64),
    pub tap_step: f64,
    pub prev: Setpoints,
    /// Bus voltage vector at the linearization point.
    pub v_lin: DVector<Complex64>,
}

impl ConvexProgram {
    pub fn dim(&self) -> usize {
        self.layout.len()
    }
}

struct EqBuilder {
    dim: usize,
    rows: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    labels: Vec<String>,
}

impl EqBuilder {
    fn push(&mut self, terms: &[(usize, f64)], rhs: f64, label: String) {
        let mut r = DVector::zeros(self.dim);
        for &(c, v) in terms {
            r[c] += v;
        }
        self.rows.push(r);
        self.rhs.push(rhs);
        self.labels.push(label);
    }

    /// Modified Gram–Schmidt; rows nearly in the span of earlier rows are dropped.
    fn finish(self) -> (DMatrix<f64>, DVector<f64>, Vec<String>, usize) {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut keep = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            let scale = r.norm();
            if scale == 0.0 {
                log::warn!("dropping empty equality row {}", self.labels[i]);
                continue;
            }
            let mut v = r / scale;
            for _ in 0..2 {
                for q in &basis {
                    let d = q.dot(&v);
                    v.axpy(-d, q, 1.0);
                }
            }
            let res = v.norm();
            if res <= 1e-10 {
                log::warn!("dropping linearly dependent equality row {}", self.labels[i]);
                continue;
            }
            basis.push(v / res);
            keep.push(i);
        }
        let dropped = self.rows.len() - keep.len();
        let a = DMatrix::from_fn(keep.len(), self.dim, |i, j| self.rows[keep[i]][j]);
        let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.rhs[i]));
        let labels = keep.iter().map(|&i| self.labels[i].clone()).collect();
        (a, b, labels, dropped)
    }
}

/// Build the linearized OPF around the estimate.
///
/// Equalities: `[ΔP; ΔQ] = M ΔV_rect` for every bus, the first-order tap
/// coupling `ΔV_tf2 = a_prev ΔV_tf1 + Δa V_tf1`, lossless transformer
/// balance, and `ΔP = ΔQ = 0` wherever nothing is controllable.
/// Inequalities: tap and generator boxes, generator apparent-power discs and
/// the tightened voltage corners.
pub fn assemble_program(
    grid: &GridModel,
    m: &SensitivityMatrix,
    est: &EstimationResult,
    tightened: &TightenedConstraintSet,
    limits: &[DgLimits],
    prev: &Setpoints,
    opts: &ProgramOptions,
) -> Result<ConvexProgram, OpfError> {
    let n = grid.n();
    let nb = n + 3;
    let idx = grid.index();
    let dim_err = |what: &'static str, expected: usize, got: usize| OpfError::Dimension { what, expected, got };
    if m.buses() != nb {
        return Err(dim_err("sensitivity matrix", nb, m.buses()));
    }
    if est.n() != n {
        return Err(dim_err("estimate", n, est.n()));
    }
    if tightened.nodes.len() != n {
        return Err(dim_err("tightened constraints", n, tightened.nodes.len()));
    }
    if prev.dg.len() != limits.len() {
        return Err(dim_err("previous generator setpoints", limits.len(), prev.dg.len()));
    }
    if !(opts.reactive_weight.is_finite()) {
        return Err(OpfError::InvalidLimit("reactive weight must be finite".into()));
    }
    for (l, s) in limits.iter().zip(&prev.dg) {
        check_dg(grid, l, s.row, s.p, s.q)?;
    }
    let (tap_min, tap_max, tap_step) = match &grid.transformer {
        Some(t) => (t.tap_min, t.tap_max, t.tap_step),
        None => (1.0, 1.0, 0.0125),
    };
    if grid.transformer.is_some() {
        for (p, &a) in prev.tap.0.iter().enumerate() {
            if a < tap_min - PREV_TOL || a > tap_max + PREV_TOL {
                return Err(OpfError::InconsistentPrev(format!("tap {p} = {a} outside [{tap_min}, {tap_max}]")));
            }
        }
    }

    let soft = opts.soft_penalty.is_some();
    let layout = VariableLayout::new(grid, opts.free_source, soft);
    let dim = layout.len();
    let mut v_lin = DVector::from_element(nb, Complex64::new(0.0, 0.0));
    for (r, v) in prev.v_source.iter().enumerate() {
        v_lin[r] = *v;
    }
    v_lin.rows_mut(3, n).copy_from(est.v_est());

    let mut objective = DVector::zeros(dim);
    for r in idx.source_rows() {
        objective[layout.p(r)] = 1.0;
        objective[layout.q(r)] = opts.reactive_weight;
    }

    let mut eq = EqBuilder {
        dim,
        rows: Vec::new(),
        rhs: Vec::new(),
        labels: Vec::new(),
    };
    let m = &m.matrix;
    let v_col = |j: usize| if j < nb { layout.v_re(j) } else { layout.v_im(j - nb) };
    for k in 0..2 * nb {
        let (s_col, what) = if k < nb { (layout.p(k), "p") } else { (layout.q(k - nb), "q") };
        let mut terms = vec![(s_col, 1.0)];
        for j in 0..2 * nb {
            if let Some(c) = v_col(j) {
                if m[(k, j)] != 0.0 {
                    terms.push((c, -m[(k, j)]));
                }
            }
        }
        eq.push(&terms, 0.0, format!("flow_{what}[{}]", grid.row_label(k % nb)));
    }
    for (r1, r2) in idx.primary_rows().zip(idx.secondary_rows()) {
        let p = idx.entry(r1).phase.index();
        let a = prev.tap.0[p];
        let v1 = v_lin[r1];
        let ta = layout.tap(p).expect("transformer present");
        let label = grid.row_label(r2);
        eq.push(
            &[(layout.v_re(r2).unwrap(), 1.0), (layout.v_re(r1).unwrap(), -a), (ta, -v1.re)],
            0.0,
            format!("tap_re[{label}]"),
        );
        eq.push(
            &[(layout.v_im(r2).unwrap(), 1.0), (layout.v_im(r1).unwrap(), -a), (ta, -v1.im)],
            0.0,
            format!("tap_im[{label}]"),
        );
        eq.push(&[(layout.p(r1), 1.0), (layout.p(r2), 1.0)], 0.0, format!("tf_p[{label}]"));
        eq.push(&[(layout.q(r1), 1.0), (layout.q(r2), 1.0)], 0.0, format!("tf_q[{label}]"));
    }
    for r in 3..nb {
        if idx.is_transformer_row(r) || limits.iter().any(|l| l.row == r) {
            continue;
        }
        eq.push(&[(layout.p(r), 1.0)], 0.0, format!("fixed_p[{}]", grid.row_label(r)));
        eq.push(&[(layout.q(r), 1.0)], 0.0, format!("fixed_q[{}]", grid.row_label(r)));
    }

    let mut ineqs = Vec::new();
    if grid.transformer.is_some() {
        for p in 0..3 {
            let c = layout.tap(p).unwrap();
            let a = prev.tap.0[p];
            ineqs.push(Inequality::linear(IneqKind::TapUpper { phase: p }, dim, &[(c, 1.0)], tap_max - a));
            ineqs.push(Inequality::linear(IneqKind::TapLower { phase: p }, dim, &[(c, -1.0)], a - tap_min));
        }
    }
    for (l, s) in limits.iter().zip(&prev.dg) {
        let (cp, cq) = (layout.p(l.row), layout.q(l.row));
        let label = grid.row_label(l.row);
        if l.s_max <= DEGENERATE {
            eq.push(&[(cp, 1.0)], -s.p, format!("dg_off_p[{label}]"));
            eq.push(&[(cq, 1.0)], -s.q, format!("dg_off_q[{label}]"));
            continue;
        }
        if l.p_max - l.p_min <= DEGENERATE {
            eq.push(&[(cp, 1.0)], l.p_min - s.p, format!("dg_fixed_p[{label}]"));
        } else {
            ineqs.push(Inequality::linear(IneqKind::PMax { row: l.row }, dim, &[(cp, 1.0)], l.p_max - s.p));
            ineqs.push(Inequality::linear(IneqKind::PMin { row: l.row }, dim, &[(cp, -1.0)], s.p - l.p_min));
        }
        if l.q_max - l.q_min <= DEGENERATE {
            eq.push(&[(cq, 1.0)], l.q_min - s.q, format!("dg_fixed_q[{label}]"));
        } else {
            ineqs.push(Inequality::linear(IneqKind::QMax { row: l.row }, dim, &[(cq, 1.0)], l.q_max - s.q));
            ineqs.push(Inequality::linear(IneqKind::QMin { row: l.row }, dim, &[(cq, -1.0)], s.q - l.q_min));
        }
        let mut rows = DMatrix::zeros(2, dim);
        rows[(0, cp)] = 1.0;
        rows[(1, cq)] = 1.0;
        ineqs.push(Inequality {
            kind: IneqKind::Apparent { row: l.row },
            lin: DVector::zeros(dim),
            gram: Some(GramForm {
                rows,
                offset: DVector::from_vec(vec![s.p, s.q]),
            }),
            bound: l.s_max * l.s_max,
        });
    }

    for node in &tightened.nodes {
        let row = node.node + 3;
        let (cr, ci) = (layout.v_re(row).unwrap(), layout.v_im(row).unwrap());
        let slack = layout.slack(node.node);
        for (corner, c) in node.circles.iter().enumerate() {
            let mut rows = DMatrix::zeros(2, dim);
            rows[(0, cr)] = 1.0;
            rows[(1, ci)] = 1.0;
            let mut lin = DVector::zeros(dim);
            if let Some(s) = slack {
                lin[s] = -2.0 * c.radius;
            }
            ineqs.push(Inequality {
                kind: IneqKind::Circle { node: node.node, corner },
                lin,
                gram: Some(GramForm {
                    rows,
                    offset: DVector::from_vec(c.offset.to_vec()),
                }),
                bound: c.radius * c.radius,
            });
        }
        for (corner, h) in node.half_planes.iter().enumerate() {
            let mut terms = vec![(cr, -h.normal[0]), (ci, -h.normal[1])];
            if let Some(s) = slack {
                terms.push((s, -1.0));
            }
            ineqs.push(Inequality::linear(
                IneqKind::HalfPlane { node: node.node, corner },
                dim,
                &terms,
                -h.bound,
            ));
        }
        if let (Some(s), Some(w)) = (slack, opts.soft_penalty) {
            objective[s] = w;
            ineqs.push(Inequality::linear(IneqKind::SlackNonNegative { node: node.node }, dim, &[(s, -1.0)], 0.0));
        }
    }

    let (eq_matrix, eq_rhs, eq_labels, dropped_equalities) = eq.finish();
    Ok(ConvexProgram {
        layout,
        objective,
        eq_matrix,
        eq_rhs,
        eq_labels,
        inequalities: ineqs,
        dropped_equalities,
        dg_limits: limits.to_vec(),
        tap_bounds: (tap_min, tap_max),
        tap_step,
        prev: prev.clone(),
        v_lin,
    })
}

fn check_dg(grid: &GridModel, l: &DgLimits, prev_row: usize, p: f64, q: f64) -> Result<(), OpfError> {
    let idx = grid.index();
    if l.row < 3 || l.row >= idx.len() || idx.is_transformer_row(l.row) {
        return Err(OpfError::InvalidLimit(format!("generator row {} is not a load node-phase", l.row)));
    }
    if prev_row != l.row {
        return Err(OpfError::InconsistentPrev(format!(
            "generator order differs: limit row {} vs setpoint row {prev_row}",
            l.row
        )));
    }
    let vals = [l.p_min, l.p_max, l.q_min, l.q_max, l.s_max];
    if vals.iter().any(|v| !v.is_finite()) || l.p_min > l.p_max || l.q_min > l.q_max || l.s_max < 0.0 {
        return Err(OpfError::InvalidLimit(format!("inconsistent generator limits at row {}", l.row)));
    }
    let outside = p < l.p_min - PREV_TOL
        || p > l.p_max + PREV_TOL
        || q < l.q_min - PREV_TOL
        || q > l.q_max + PREV_TOL
        || p.hypot(q) > l.s_max + PREV_TOL;
    if outside {
        return Err(OpfError::InconsistentPrev(format!(
            "previous setpoint ({p}, {q}) at row {} violates its limits",
            l.row
        )));
    }
    Ok(())
}

/// Line current limit on one phase of a branch, p.u.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalLimit {
    pub branch: usize,
    pub phase: Phase,
    pub i_max: f64,
}

/// Append `|I_line(V_lin + ΔV)|² ≤ i_max²` per limit; infinite limits are
/// skipped.
pub fn add_thermal_constraints(
    prog: &mut ConvexProgram,
    grid: &GridModel,
    y: &AdmittanceMatrix,
    limits: &[ThermalLimit],
) -> Result<(), OpfError> {
    let dim = prog.dim();
    let nb = prog.layout.n + 3;
    for l in limits {
        if l.i_max.is_nan() || l.i_max <= 0.0 {
            return Err(OpfError::InvalidLimit(format!("thermal limit {} must be positive", l.i_max)));
        }
        if l.i_max.is_infinite() {
            continue;
        }
        let location = Location::Branch {
            branch: l.branch,
            phase: l.phase,
        };
        crate::estimation::check_location(grid, MeasurementKind::BranchCurrentPhasor, location)
            .map_err(OpfError::InvalidLimit)?;
        let c = crate::estimation::linear_form(grid, y, MeasurementKind::BranchCurrentPhasor, location)
            .expect("validated location");
        let i0: Complex64 = c.iter().zip(prog.v_lin.iter()).map(|(a, b)| a * b).sum();
        let mut rows = DMatrix::zeros(2, dim);
        for j in 0..nb {
            if let (Some(cr), Some(ci)) = (prog.layout.v_re(j), prog.layout.v_im(j)) {
                rows[(0, cr)] = c[j].re;
                rows[(0, ci)] = -c[j].im;
                rows[(1, cr)] = c[j].im;
                rows[(1, ci)] = c[j].re;
            }
        }
        prog.inequalities.push(Inequality {
            kind: IneqKind::Thermal {
                branch: l.branch,
                phase: l.phase,
            },
            lin: DVector::zeros(dim),
            gram: Some(GramForm {
                rows,
                offset: DVector::from_vec(vec![i0.re, i0.im]),
            }),
            bound: l.i_max * l.i_max,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct SparseRow {
    terms: Vec<(usize, f64)>,
}

impl SparseRow {
    fn from_slice(v: impl Iterator<Item = f64>) -> Self {
        Self {
            terms: v.enumerate().filter(|(_, x)| *x != 0.0).collect(),
        }
    }
}

#[derive(Serialize)]
struct IneqDump {
    kind: IneqKind,
    lin: SparseRow,
    gram_rows: Vec<SparseRow>,
    gram_offset: Vec<f64>,
    bound: f64,
}

#[derive(Serialize)]
struct EqDump {
    label: String,
    row: SparseRow,
    rhs: f64,
}

#[derive(Serialize)]
struct ProgramDump {
    variables: Vec<String>,
    layout: VariableLayout,
    objective: SparseRow,
    equalities: Vec<EqDump>,
    dropped_equalities: usize,
    inequalities: Vec<IneqDump>,
    dg_limits: Vec<DgLimits>,
    tap_bounds: (f64, f64),
    tap_step: f64,
}

impl ConvexProgram {
    /// JSON debug form with named variables and sparse rows.
    pub fn to_json(&self) -> serde_json::Value {
        let dump = ProgramDump {
            variables: self.layout.names(),
            layout: self.layout.clone(),
            objective: SparseRow::from_slice(self.objective.iter().copied()),
            equalities: (0..self.eq_matrix.nrows())
                .map(|i| EqDump {
                    label: self.eq_labels[i].clone(),
                    row: SparseRow::from_slice(self.eq_matrix.row(i).iter().copied()),
                    rhs: self.eq_rhs[i],
                })
                .collect(),
            dropped_equalities: self.dropped_equalities,
            inequalities: self
                .inequalities
                .iter()
                .map(|q| IneqDump {
                    kind: q.kind,
                    lin: SparseRow::from_slice(q.lin.iter().copied()),
                    gram_rows: q
                        .gram
                        .iter()
                        .flat_map(|g| g.rows.row_iter().map(|r| SparseRow::from_slice(r.iter().copied())).collect::<Vec<_>>())
                        .collect(),
                    gram_offset: q.gram.iter().flat_map(|g| g.offset.iter().copied()).collect(),
                    bound: q.bound,
                })
                .collect(),
            dg_limits: self.dg_limits.clone(),
            tap_bounds: self.tap_bounds,
            tap_step: self.tap_step,
        };
        serde_json::to_value(dump).expect("program dump is serializable")
    }
}

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::grid::{AdmittanceMatrix, GridModel, Phase};
use crate::powerflow::ComplexVoltageState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    VoltagePhasor,
    VoltageMagnitude,
    NodeCurrentPhasor,
    NodeCurrentMagnitude,
    BranchCurrentPhasor,
    LoadPseudo,
}

impl MeasurementKind {
    pub fn is_complex(self) -> bool {
        !matches!(self, Self::VoltageMagnitude | Self::NodeCurrentMagnitude)
    }

    /// Default noise standard deviation, p.u.
    pub fn default_sigma(self) -> f64 {
        match self {
            Self::VoltagePhasor => 0.005,
            Self::VoltageMagnitude => 0.01,
            Self::NodeCurrentPhasor | Self::NodeCurrentMagnitude | Self::BranchCurrentPhasor => 0.02,
            Self::LoadPseudo => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    /// Admittance row.
    Node(usize),
    Branch { branch: usize, phase: Phase },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasuredValue {
    Real(f64),
    Complex(Complex64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: Location,
    pub value: MeasuredValue,
    /// Standard deviation, applied to each real component.
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    pub records: Vec<Measurement>,
    /// Node-phases whose net injection is known exactly (no load, or a
    /// dispatched generator only), as `(row, injection)`.
    pub known_injections: Vec<(usize, Complex64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    #[default]
    Gaussian,
    /// Uniform with the same variance as the Gaussian.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub kind: MeasurementKind,
    pub location: Location,
    pub sigma: f64,
}

/// Where the meters sit and how noisy the load forecasts are.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPlan {
    pub placements: Vec<Placement>,
    /// Pseudo-measurement σ as a fraction of the load magnitude.
    pub pseudo_sigma_frac: f64,
    /// Shape of the forecast error; meters are always Gaussian.
    pub pseudo_noise: NoiseShape,
}

pub(crate) fn check_location(
    grid: &GridModel,
    kind: MeasurementKind,
    location: Location,
) -> Result<(), String> {
    match (kind, location) {
        (MeasurementKind::BranchCurrentPhasor, Location::Branch { branch, phase }) => {
            let br = grid.branches.get(branch).ok_or_else(|| format!("no branch {branch}"))?;
            if grid.is_transformer_branch(branch) {
                return Err("transformer branches carry no modelled current".into());
            }
            if !br.phases.contains(&phase) {
                return Err(format!("branch {branch} has no phase {phase}"));
            }
            Ok(())
        }
        (MeasurementKind::BranchCurrentPhasor, Location::Node(_)) => {
            Err("branch current needs a branch location".into())
        }
        (_, Location::Branch { .. }) => Err("node measurement placed on a branch".into()),
        (_, Location::Node(row)) => {
            if row >= grid.index().len() {
                Err(format!("no node-phase row {row}"))
            } else {
                Ok(())
            }
        }
    }
}

/// Linear coefficients `c` with `z = Σ_j c_j V_bus,j` for phasor-type quantities.
pub(crate) fn linear_form(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    kind: MeasurementKind,
    location: Location,
) -> Option<DVector<Complex64>> {
    let nb = y.dim();
    match (kind, location) {
        (MeasurementKind::VoltagePhasor | MeasurementKind::VoltageMagnitude, Location::Node(row)) => {
            let mut c = DVector::zeros(nb);
            c[row] = Complex64::new(1.0, 0.0);
            Some(c)
        }
        (MeasurementKind::NodeCurrentPhasor | MeasurementKind::NodeCurrentMagnitude, Location::Node(row)) => {
            Some(y.matrix.row(row).transpose())
        }
        (MeasurementKind::BranchCurrentPhasor, Location::Branch { branch, phase }) => {
            let br = &grid.branches[branch];
            let idx = grid.index();
            let r = br.phases.iter().position(|&p| p == phase)?;
            let mut c = DVector::zeros(nb);
            for (q, &ph) in br.phases.iter().enumerate() {
                let w = br.admittance[(r, q)];
                c[idx.row(br.from, ph)?] += w;
                c[idx.row(br.to, ph)?] -= w;
            }
            Some(c)
        }
        _ => None,
    }
}

/// Noise-free value of a measurement at `state`.
pub fn evaluate(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    kind: MeasurementKind,
    location: Location,
    state: &ComplexVoltageState,
) -> MeasuredValue {
    let vb = state.bus_vector();
    if kind == MeasurementKind::LoadPseudo {
        let Location::Node(row) = location else {
            unreachable!("validated location")
        };
        let current: Complex64 = y.matrix.row(row).iter().zip(vb.iter()).map(|(a, b)| a * b).sum();
        return MeasuredValue::Complex(vb[row] * current.conj());
    }
    let c = linear_form(grid, y, kind, location).expect("validated location");
    let z: Complex64 = c.iter().zip(vb.iter()).map(|(a, b)| a * b).sum();
    if kind.is_complex() {
        MeasuredValue::Complex(z)
    } else {
        MeasuredValue::Real(z.norm())
    }
}

/// Measurement value(s) and Jacobian row(s) with respect to the non-source
/// rectangular state `[Re V; Im V]`. `sens` is the sensitivity matrix at
/// `state`, needed for injection-type rows.
pub(crate) fn model_rows(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    sens: &DMatrix<f64>,
    kind: MeasurementKind,
    location: Location,
    state: &ComplexVoltageState,
) -> (Vec<f64>, Vec<DVector<f64>>) {
    let n = state.n();
    let nb = n + 3;
    if kind == MeasurementKind::LoadPseudo {
        let Location::Node(row) = location else {
            unreachable!("validated location")
        };
        let MeasuredValue::Complex(s) = evaluate(grid, y, kind, location, state) else {
            unreachable!()
        };
        return (vec![s.re, s.im], injection_rows(sens, row, n));
    }
    let c = linear_form(grid, y, kind, location).expect("validated location");
    let vb = state.bus_vector();
    let z: Complex64 = c.iter().zip(vb.iter()).map(|(a, b)| a * b).sum();
    let mut d_re = DVector::zeros(2 * n);
    let mut d_im = DVector::zeros(2 * n);
    for j in 0..n {
        let cj = c[j + 3];
        d_re[j] = cj.re;
        d_re[n + j] = -cj.im;
        d_im[j] = cj.im;
        d_im[n + j] = cj.re;
    }
    debug_assert_eq!(c.len(), nb);
    if kind.is_complex() {
        (vec![z.re, z.im], vec![d_re, d_im])
    } else {
        let mag = z.norm().max(1e-12);
        let d = (d_re * z.re + d_im * z.im) / mag;
        (vec![z.norm()], vec![d])
    }
}

/// Rows of the sensitivity matrix for `(P, Q)` at `row`, restricted to
/// non-source columns.
pub(crate) fn injection_rows(sens: &DMatrix<f64>, row: usize, n: usize) -> Vec<DVector<f64>> {
    let nb = n + 3;
    [row, nb + row]
        .iter()
        .map(|&r| {
            DVector::from_fn(2 * n, |j, _| {
                if j < n {
                    sens[(r, j + 3)]
                } else {
                    sens[(r, nb + 3 + j - n)]
                }
            })
        })
        .collect()
}

/// Adds `wp ∇²P_row + wq ∇²Q_row` over the non-source rectangular state.
/// Both injections are quadratic in `V`, so the Hessians are constant.
pub(crate) fn add_injection_hessian(y: &AdmittanceMatrix, row: usize, n: usize, wp: f64, wq: f64, out: &mut DMatrix<f64>) {
    if row < 3 {
        return;
    }
    let (ek, fk) = (row - 3, n + row - 3);
    for j in 3..y.dim() {
        let yk = y.matrix[(row, j)];
        if yk == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (ej, fj) = (j - 3, n + j - 3);
        // P = Σ G(e_k e_j + f_k f_j) + B(f_k e_j - e_k f_j),
        // Q = Σ G(f_k e_j - e_k f_j) - B(e_k e_j + f_k f_j).
        let sym = wp * yk.re - wq * yk.im;
        let skew = wp * yk.im + wq * yk.re;
        for (a, b, w) in [(ek, ej, sym), (fk, fj, sym), (fk, ej, skew), (ek, fj, -skew)] {
            out[(a, b)] += w;
            out[(b, a)] += w;
        }
    }
}

/// Adds `Σ w_i ∇²h_i` for the component(s) of one measurement model.
pub(crate) fn add_model_hessian(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    kind: MeasurementKind,
    location: Location,
    state: &ComplexVoltageState,
    weights: &[f64],
    out: &mut DMatrix<f64>,
) {
    let n = state.n();
    if kind == MeasurementKind::LoadPseudo {
        let Location::Node(row) = location else {
            unreachable!("validated location")
        };
        add_injection_hessian(y, row, n, weights[0], weights[1], out);
        return;
    }
    if kind.is_complex() {
        return;
    }
    // ∇²|z| = (∇a ∇aᵀ + ∇b ∇bᵀ - ∇|z| ∇|z|ᵀ) / |z| for z = a + ib linear in V.
    let c = linear_form(grid, y, kind, location).expect("validated location");
    let vb = state.bus_vector();
    let z: Complex64 = c.iter().zip(vb.iter()).map(|(a, b)| a * b).sum();
    let mag = z.norm().max(1e-12);
    let mut d_re = DVector::zeros(2 * n);
    let mut d_im = DVector::zeros(2 * n);
    for j in 0..n {
        let cj = c[j + 3];
        d_re[j] = cj.re;
        d_re[n + j] = -cj.im;
        d_im[j] = cj.im;
        d_im[n + j] = cj.re;
    }
    let g = (&d_re * z.re + &d_im * z.im) / mag;
    let w = weights[0] / mag;
    out.ger(w, &d_re, &d_re, 1.0);
    out.ger(w, &d_im, &d_im, 1.0);
    out.ger(-w, &g, &g, 1.0);
}

/// Synthesize meter readings and load pseudo-measurements from ground truth.
///
/// `injection` is the true net injection and `loads` the true consumption per
/// non-source node-phase. Node-phases without load become exactly known
/// injections. Deterministic in `seed`.
pub fn generate_measurements(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    plan: &MeasurementPlan,
    truth: &ComplexVoltageState,
    injection: &DVector<Complex64>,
    loads: &DVector<Complex64>,
    seed: u64,
) -> Result<MeasurementSet, EstimationError> {
    let n = grid.n();
    for (got, _) in [(truth.n(), "truth"), (injection.len(), "injection"), (loads.len(), "loads")] {
        if got != n {
            return Err(EstimationError::Dimension { expected: n, got });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(plan.placements.len() + n);
    for (i, pl) in plan.placements.iter().enumerate() {
        check_location(grid, pl.kind, pl.location)
            .map_err(|reason| EstimationError::InvalidMeasurement { index: i, reason })?;
        if !(pl.sigma >= 0.0 && pl.sigma.is_finite()) {
            return Err(EstimationError::InvalidMeasurement {
                index: i,
                reason: "sigma must be non-negative".into(),
            });
        }
        let value = match evaluate(grid, y, pl.kind, pl.location, truth) {
            // Magnitude meters cannot read below zero.
            MeasuredValue::Real(v) => MeasuredValue::Real((v + pl.sigma * gaussian(&mut rng)).max(0.0)),
            MeasuredValue::Complex(v) => MeasuredValue::Complex(
                v + Complex64::new(pl.sigma * gaussian(&mut rng), pl.sigma * gaussian(&mut rng)),
            ),
        };
        records.push(Measurement {
            kind: pl.kind,
            location: pl.location,
            value,
            sigma: pl.sigma,
        });
    }

    let idx = grid.index();
    let mut known_injections = Vec::new();
    for k in 0..n {
        let row = k + 3;
        if idx.is_transformer_row(row) {
            continue;
        }
        let load = loads[k].norm();
        if load == 0.0 {
            known_injections.push((row, injection[k]));
            continue;
        }
        let sigma = plan.pseudo_sigma_frac * load;
        let mut draw = || sigma * noise(&mut rng, plan.pseudo_noise);
        let value = injection[k] + Complex64::new(draw(), draw());
        records.push(Measurement {
            kind: MeasurementKind::LoadPseudo,
            location: Location::Node(row),
            value: MeasuredValue::Complex(value),
            sigma,
        });
    }
    Ok(MeasurementSet {
        records,
        known_injections,
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn noise(rng: &mut ChaCha8Rng, shape: NoiseShape) -> f64 {
    match shape {
        NoiseShape::Gaussian => gaussian(rng),
        NoiseShape::Uniform => 3f64.sqrt() * rng.random_range(-1.0..1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_isolated_admittance;
    use crate::grid::fixtures::small_tf;
    use crate::powerflow::{solve_powerflow, PowerFlowCase};
    use crate::grid::TapVector;

    fn truth_and_loads() -> (GridModel, ComplexVoltageState, DVector<Complex64>, DVector<Complex64>) {
        let g = small_tf();
        let idx = g.index();
        let loads = DVector::from_fn(g.n(), |k, _| {
            if idx.is_transformer_row(k + 3) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.1 + 0.01 * k as f64, 0.03)
            }
        });
        let src = [0.0f64, -120.0, 120.0].map(|d| Complex64::from_polar(1.0, d.to_radians()));
        let case = PowerFlowCase::new(&loads, &DVector::zeros(g.n()), TapVector::NOMINAL, src);
        let sol = solve_powerflow(&g, &case).unwrap();
        (g, sol.state, case.injection, loads)
    }

    fn plan(sigma: f64) -> MeasurementPlan {
        MeasurementPlan {
            placements: vec![
                Placement {
                    kind: MeasurementKind::VoltageMagnitude,
                    location: Location::Node(14),
                    sigma,
                },
                Placement {
                    kind: MeasurementKind::BranchCurrentPhasor,
                    location: Location::Branch { branch: 3, phase: Phase::B },
                    sigma,
                },
                Placement {
                    kind: MeasurementKind::NodeCurrentMagnitude,
                    location: Location::Node(4),
                    sigma,
                },
            ],
            pseudo_sigma_frac: sigma,
            pseudo_noise: NoiseShape::Gaussian,
        }
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let (g, truth, inj, loads) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let set = generate_measurements(&g, &y, &plan(0.0), &truth, &inj, &loads, 1).unwrap();
        for m in &set.records {
            let d = match (m.value, evaluate(&g, &y, m.kind, m.location, &truth)) {
                (MeasuredValue::Real(a), MeasuredValue::Real(b)) => (a - b).abs(),
                (MeasuredValue::Complex(a), MeasuredValue::Complex(b)) => (a - b).norm(),
                _ => panic!("value shape changed"),
            };
            // Pseudo values carry the power-flow residual of the truth.
            assert!(d < 1e-10, "{:?}: {d}", m.kind);
        }
        // Transformer terminals get neither pseudo nor known entries.
        let covered = set.records.iter().filter(|m| m.kind == MeasurementKind::LoadPseudo).count()
            + set.known_injections.len();
        assert_eq!(covered, g.n() - 6);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (g, truth, inj, loads) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let a = generate_measurements(&g, &y, &plan(0.01), &truth, &inj, &loads, 42).unwrap();
        let b = generate_measurements(&g, &y, &plan(0.01), &truth, &inj, &loads, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn magnitude_noise_has_configured_moments() {
        let (g, truth, inj, loads) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let p = MeasurementPlan {
            placements: vec![Placement {
                kind: MeasurementKind::VoltageMagnitude,
                location: Location::Node(10),
                sigma: 0.01,
            }],
            pseudo_sigma_frac: 0.5,
            pseudo_noise: NoiseShape::Gaussian,
        };
        let exact = truth.nodes[7].norm();
        let draws: Vec<f64> = (0..10_000)
            .map(|s| match generate_measurements(&g, &y, &p, &truth, &inj, &loads, s).unwrap().records[0].value {
                MeasuredValue::Real(v) => v,
                _ => unreachable!(),
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((mean - exact).abs() < 3e-4, "mean offset {}", mean - exact);
        assert!((var.sqrt() - 0.01).abs() < 0.05 * 0.01, "sd {}", var.sqrt());
    }

    #[test]
    fn placement_on_missing_element_rejected() {
        let (g, truth, inj, loads) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let mut p = plan(0.01);
        p.placements.push(Placement {
            kind: MeasurementKind::BranchCurrentPhasor,
            location: Location::Branch { branch: 99, phase: Phase::A },
            sigma: 0.01,
        });
        assert!(matches!(
            generate_measurements(&g, &y, &p, &truth, &inj, &loads, 0),
            Err(EstimationError::InvalidMeasurement { index: 3, .. })
        ));
    }

    #[test]
    fn jacobian_rows_match_finite_differences() {
        let (g, truth, _, _) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let sens = crate::powerflow::linearize(&y, &truth).unwrap().matrix;
        let n = truth.n();
        let cases = [
            (MeasurementKind::VoltageMagnitude, Location::Node(14)),
            (MeasurementKind::NodeCurrentMagnitude, Location::Node(4)),
            (MeasurementKind::BranchCurrentPhasor, Location::Branch { branch: 1, phase: Phase::C }),
            (MeasurementKind::LoadPseudo, Location::Node(13)),
        ];
        let h = 1e-7;
        for (kind, loc) in cases {
            let (_, rows) = model_rows(&g, &y, &sens, kind, loc, &truth);
            for j in 0..2 * n {
                let mut xp = truth.rect();
                let mut xm = truth.rect();
                xp[j] += h;
                xm[j] -= h;
                let sp = ComplexVoltageState::from_rect(truth.source, &xp).unwrap();
                let sm = ComplexVoltageState::from_rect(truth.source, &xm).unwrap();
                let (vp, _) = model_rows(&g, &y, &sens, kind, loc, &sp);
                let (vm, _) = model_rows(&g, &y, &sens, kind, loc, &sm);
                for (r, row) in rows.iter().enumerate() {
                    let fd = (vp[r] - vm[r]) / (2.0 * h);
                    assert!((fd - row[j]).abs() < 1e-5 * (1.0 + fd.abs()), "{kind:?} row {r} col {j}");
                }
            }
        }
    }

    #[test]
    fn model_hessians_match_finite_differences() {
        let (g, truth, _, _) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        let n = truth.n();
        let cases = [
            (MeasurementKind::VoltageMagnitude, Location::Node(14)),
            (MeasurementKind::NodeCurrentMagnitude, Location::Node(4)),
            (MeasurementKind::BranchCurrentPhasor, Location::Branch { branch: 1, phase: Phase::C }),
            (MeasurementKind::LoadPseudo, Location::Node(13)),
        ];
        let grad = |kind, loc, x: &DVector<f64>| {
            let s = ComplexVoltageState::from_rect(truth.source, x).unwrap();
            let sens = crate::powerflow::linearize(&y, &s).unwrap().matrix;
            model_rows(&g, &y, &sens, kind, loc, &s).1
        };
        let h = 1e-6;
        for (kind, loc) in cases {
            let comps = if kind.is_complex() { 2 } else { 1 };
            for r in 0..comps {
                let mut weights = vec![0.0; comps];
                weights[r] = 1.0;
                let mut hess = DMatrix::zeros(2 * n, 2 * n);
                add_model_hessian(&g, &y, kind, loc, &truth, &weights, &mut hess);
                for j in 0..2 * n {
                    let mut xp = truth.rect();
                    let mut xm = truth.rect();
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (&grad(kind, loc, &xp)[r] - &grad(kind, loc, &xm)[r]) / (2.0 * h);
                    for i in 0..2 * n {
                        let err = (col[i] - hess[(i, j)]).abs();
                        assert!(err < 1e-5 * (1.0 + col[i].abs()), "{kind:?} comp {r} ({i},{j}): {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn magnitude_readings_never_negative() {
        let (g, truth, inj, loads) = truth_and_loads();
        let y = build_isolated_admittance(&g);
        for seed in 0..200 {
            let set = generate_measurements(&g, &y, &plan(0.5), &truth, &inj, &loads, seed).unwrap();
            for m in &set.records {
                if let MeasuredValue::Real(v) = m.value {
                    assert!(v >= 0.0);
                }
            }
        }
    }
}

use nalgebra::{DMatrix, DVector};

use super::{ComplexVoltageState, PowerFlowError};
use crate::grid::AdmittanceMatrix;

/// First-order map from bus voltage deltas to injection deltas.
///
/// Column layout is `[Re ΔV_src; Re ΔV; Im ΔV_src; Im ΔV]` and row layout
/// `[ΔP_src; ΔP; ΔQ_src; ΔQ]`, both of length `2(N + 3)`.
#[derive(Clone, Debug)]
pub struct SensitivityMatrix {
    pub matrix: DMatrix<f64>,
}

impl SensitivityMatrix {
    /// Bus count `N + 3`.
    pub fn buses(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn apply(&self, dv_bus_rect: &DVector<f64>) -> DVector<f64> {
        &self.matrix * dv_bus_rect
    }

    pub fn p_row(&self, bus_row: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.matrix.rows(bus_row, 1)
    }

    pub fn q_row(&self, bus_row: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.matrix.rows(self.buses() + bus_row, 1)
    }
}

/// Linearize `S = diag(V) conj(Y V)` at `v`.
///
/// With `A = diag(conj(Y) conj(V))` and `B = diag(V) conj(Y)`,
/// `ΔS = A ΔV + B conj(ΔV)`, which in rectangular form is
/// `[[Re A + Re B, -Im A + Im B], [Im A + Im B, Re A - Re B]]`.
pub fn linearize(
    y: &AdmittanceMatrix,
    v: &ComplexVoltageState,
) -> Result<SensitivityMatrix, PowerFlowError> {
    let n = y.dim();
    if n != v.n() + 3 {
        return Err(PowerFlowError::Dimension {
            expected: n,
            got: v.n() + 3,
        });
    }
    let vb = v.bus_vector();
    let current = &y.matrix * &vb;
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for k in 0..n {
        let a = current[k].conj();
        for j in 0..n {
            let b = vb[k] * y.matrix[(k, j)].conj();
            m[(k, j)] = b.re;
            m[(k, n + j)] = b.im;
            m[(n + k, j)] = b.im;
            m[(n + k, n + j)] = -b.re;
        }
        m[(k, k)] += a.re;
        m[(k, n + k)] -= a.im;
        m[(n + k, k)] += a.im;
        m[(n + k, n + k)] += a.re;
    }
    Ok(SensitivityMatrix { matrix: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_isolated_admittance;
    use crate::grid::fixtures::small_tf;
    use crate::powerflow::compute_injections;
    use num_complex::Complex64;

    fn operating_point() -> (AdmittanceMatrix, ComplexVoltageState) {
        let g = small_tf();
        let y = build_isolated_admittance(&g);
        let src = [0.0f64, -120.0, 120.0].map(|d| Complex64::from_polar(1.0, d.to_radians()));
        let idx = g.index();
        let nodes = DVector::from_fn(g.n(), |k, _| {
            let p = idx.entry(k + 3).phase.index();
            src[p] * Complex64::from_polar(0.98 - 0.003 * k as f64, -0.004 * k as f64)
        });
        (y, ComplexVoltageState::new(src, nodes).unwrap())
    }

    fn bus_rect_plus(v: &ComplexVoltageState, d: &DVector<f64>) -> ComplexVoltageState {
        let n = v.n() + 3;
        let vb = v.bus_vector();
        let shifted: Vec<Complex64> =
            (0..n).map(|i| vb[i] + Complex64::new(d[i], d[n + i])).collect();
        ComplexVoltageState::new(
            [shifted[0], shifted[1], shifted[2]],
            DVector::from_column_slice(&shifted[3..]),
        )
        .unwrap()
    }

    fn injections_rect(y: &AdmittanceMatrix, v: &ComplexVoltageState) -> DVector<f64> {
        let s = compute_injections(y, v).unwrap().0;
        let n = s.len();
        DVector::from_fn(2 * n, |i, _| if i < n { s[i].re } else { s[i - n].im })
    }

    #[test]
    fn matches_central_difference_jacobian() {
        let (y, v) = operating_point();
        let m = linearize(&y, &v).unwrap().matrix;
        let dim = m.ncols();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = h;
            let plus = injections_rect(&y, &bus_rect_plus(&v, &e));
            let minus = injections_rect(&y, &bus_rect_plus(&v, &(-e)));
            fd.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        let rel = (&m - &fd).norm() / fd.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn zero_delta_maps_to_zero() {
        let (y, v) = operating_point();
        let m = linearize(&y, &v).unwrap();
        let out = m.apply(&DVector::zeros(m.matrix.ncols()));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn remainder_is_second_order() {
        let (y, v) = operating_point();
        let m = linearize(&y, &v).unwrap();
        let dim = m.matrix.ncols();
        let dir = DVector::from_fn(dim, |i, _| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.45);
        let base = injections_rect(&y, &v);
        let err = |eps: f64| {
            let d = &dir * eps;
            (injections_rect(&y, &bus_rect_plus(&v, &d)) - &base - m.apply(&d)).norm()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }
}

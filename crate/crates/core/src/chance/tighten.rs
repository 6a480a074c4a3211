use num_complex::Complex64;

use super::{ChanceError, ChanceSpec};
use crate::estimation::EstimationResult;

/// Sign pairs `(s_re, s_im)` in emission order.
pub const CORNERS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

const MIN_ESTIMATE: f64 = 1e-6;
const VARIANCE_TOL: f64 = 1e-10;

/// `‖ΔV + offset‖ ≤ radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub offset: [f64; 2],
    pub radius: f64,
}

/// `normal · ΔV ≥ bound`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    pub normal: [f64; 2],
    pub bound: f64,
}

impl Circle {
    /// Positive when violated.
    pub fn violation(&self, dv: [f64; 2]) -> f64 {
        (dv[0] + self.offset[0]).hypot(dv[1] + self.offset[1]) - self.radius
    }
}

impl HalfPlane {
    /// Positive when violated.
    pub fn violation(&self, dv: [f64; 2]) -> f64 {
        self.bound - (self.normal[0] * dv[0] + self.normal[1] * dv[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeConstraints {
    /// Non-source node-phase index `0..N`.
    pub node: usize,
    pub v_est: Complex64,
    /// `(σ_re, σ_im)`.
    pub sigma: [f64; 2],
    pub circles: [Circle; 4],
    pub half_planes: [HalfPlane; 4],
}

impl NodeConstraints {
    pub fn max_violation(&self, dv: [f64; 2]) -> f64 {
        let c = self.circles.iter().map(|c| c.violation(dv));
        let h = self.half_planes.iter().map(|h| h.violation(dv));
        c.chain(h).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightenedConstraintSet {
    pub spec: ChanceSpec,
    pub nodes: Vec<NodeConstraints>,
}

impl TightenedConstraintSet {
    pub fn constraint_count(&self) -> usize {
        self.nodes.len() * 8
    }
}

/// Unit vector along `v`, the normal of the tangent half-plane.
pub fn min_halfplane_coeffs(v: Complex64) -> Result<[f64; 2], ChanceError> {
    let m = v.norm();
    if !(m >= MIN_ESTIMATE) {
        return Err(ChanceError::DegenerateEstimate { node: 0, magnitude: m });
    }
    Ok([v.re / m, v.im / m])
}

pub fn tighten_constraints(est: &EstimationResult, spec: &ChanceSpec) -> Result<TightenedConstraintSet, ChanceError> {
    let n = est.n();
    if est.covariance.nrows() != 2 * n {
        return Err(ChanceError::Dimension {
            expected: 2 * n,
            got: est.covariance.nrows(),
        });
    }
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let v = est.v_est()[i];
        let normal = min_halfplane_coeffs(v).map_err(|_| ChanceError::DegenerateEstimate {
            node: i,
            magnitude: v.norm(),
        })?;
        let mut sigma = [0.0; 2];
        for (s, idx) in sigma.iter_mut().zip([i, n + i]) {
            let var = est.covariance[(idx, idx)];
            if !(var >= -VARIANCE_TOL) {
                return Err(ChanceError::InvalidCovariance { index: idx, value: var });
            }
            *s = var.max(0.0).sqrt();
        }
        let corner = |(sr, si): (f64, f64)| {
            [v.re + sr * spec.alpha * sigma[0], v.im + si * spec.alpha * sigma[1]]
        };
        let circles = CORNERS.map(|c| Circle {
            offset: corner(c),
            radius: spec.v_max,
        });
        let half_planes = CORNERS.map(|c| {
            let o = corner(c);
            HalfPlane {
                normal,
                bound: spec.v_min - (normal[0] * o[0] + normal[1] * o[1]),
            }
        });
        nodes.push(NodeConstraints {
            node: i,
            v_est: v,
            sigma,
            circles,
            half_planes,
        });
    }
    Ok(TightenedConstraintSet { spec: *spec, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chance::check_corner_sufficiency;
    use crate::powerflow::ComplexVoltageState;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn estimate(v: &[Complex64], var: &[f64]) -> EstimationResult {
        let src = [Complex64::new(1.0, 0.0); 3];
        let state = ComplexVoltageState::new(src, DVector::from_column_slice(v)).unwrap();
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(var));
        EstimationResult::from_parts(state, cov).unwrap()
    }

    fn spec(alpha: f64) -> ChanceSpec {
        ChanceSpec::with_alpha(0.95, alpha, 0.95, 1.05).unwrap()
    }

    #[test]
    fn real_axis_normal() {
        assert_eq!(min_halfplane_coeffs(Complex64::new(1.0, 0.0)).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn zero_estimate_is_degenerate() {
        assert!(matches!(
            min_halfplane_coeffs(Complex64::new(0.0, 0.0)),
            Err(ChanceError::DegenerateEstimate { .. })
        ));
        let est = estimate(&[Complex64::new(1.0, 0.0), Complex64::new(1e-9, 0.0)], &[0.0; 4]);
        assert!(matches!(
            tighten_constraints(&est, &spec(2.5)),
            Err(ChanceError::DegenerateEstimate { node: 1, .. })
        ));
    }

    #[test]
    fn zero_covariance_collapses_corners() {
        let est = estimate(&[Complex64::from_polar(1.01, -0.3)], &[0.0, 0.0]);
        let set = tighten_constraints(&est, &spec(2.5)).unwrap();
        let node = &set.nodes[0];
        assert!(node.circles.iter().all(|c| *c == node.circles[0]));
        assert!(node.half_planes.iter().all(|h| *h == node.half_planes[0]));
        assert_eq!(set.constraint_count(), 8);
    }

    #[test]
    fn negative_variance_rejected() {
        let est = estimate(&[Complex64::new(1.0, 0.0)], &[1e-4, -1e-6]);
        assert_eq!(
            tighten_constraints(&est, &spec(2.5)),
            Err(ChanceError::InvalidCovariance { index: 1, value: -1e-6 })
        );
        let tiny = estimate(&[Complex64::new(1.0, 0.0)], &[1e-4, -1e-12]);
        assert!(tighten_constraints(&tiny, &spec(2.5)).is_ok());
    }

    #[test]
    fn halfplane_region_inside_annulus_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v_min = 0.95;
        for _ in 0..1_000_000 {
            let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let n = min_halfplane_coeffs(Complex64::from_polar(1.0, theta)).unwrap();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            if n[0] * x[0] + n[1] * x[1] >= v_min {
                assert!(x[0].hypot(x[1]) >= v_min);
            }
        }
    }

    proptest! {
        #[test]
        fn eight_constraints_per_node(
            mags in proptest::collection::vec(0.8f64..1.2, 1..6),
            var in 0.0f64..1e-3,
        ) {
            let v: Vec<Complex64> = mags.iter().enumerate()
                .map(|(k, &m)| Complex64::from_polar(m, -2.0944 * (k % 3) as f64)).collect();
            let est = estimate(&v, &vec![var; 2 * v.len()]);
            let set = tighten_constraints(&est, &spec(2.5)).unwrap();
            prop_assert_eq!(set.constraint_count(), 8 * v.len());
        }

        #[test]
        fn unit_normal_for_any_angle(theta in -10.0f64..10.0, m in 1e-3f64..10.0) {
            let n = min_halfplane_coeffs(Complex64::from_polar(m, theta)).unwrap();
            prop_assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn larger_alpha_gives_smaller_feasible_set(
            a1 in 0.0f64..3.0, da in 0.0f64..2.0,
            sr in 0.0f64..0.01, si in 0.0f64..0.01,
            theta in -3.2f64..3.2, seed in any::<u64>(),
        ) {
            let est = estimate(&[Complex64::from_polar(1.0, theta)], &[sr * sr, si * si]);
            let tight = tighten_constraints(&est, &spec(a1 + da)).unwrap();
            let loose = tighten_constraints(&est, &spec(a1)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let dv = DVector::from_vec(vec![rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08)]);
                if check_corner_sufficiency(&dv, &tight) {
                    prop_assert!(check_corner_sufficiency(&dv, &loose));
                }
            }
        }
    }
}

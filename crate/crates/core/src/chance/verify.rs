use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ChanceError, ChanceSpec, TightenedConstraintSet};
use crate::estimation::EstimationResult;
use crate::linalg::psd_factor;

/// Closed constraints are accepted up to this absolute slack, p.u.
const FEAS_TOL: f64 = 1e-9;
const BLOCK: usize = 4096;

/// Largest violation over all 8 constraints of every node-phase; `delta_v`
/// is `[Re ΔV; Im ΔV]`.
pub fn max_corner_violation(delta_v: &DVector<f64>, set: &TightenedConstraintSet) -> f64 {
    let n = set.nodes.len();
    set.nodes
        .iter()
        .map(|c| c.max_violation([delta_v[c.node], delta_v[n + c.node]]))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn check_corner_sufficiency(delta_v: &DVector<f64>, set: &TightenedConstraintSet) -> bool {
    delta_v.len() == 2 * set.nodes.len() && max_corner_violation(delta_v, set) <= FEAS_TOL
}

/// Per-node fraction of draws `V ~ N(V_est + ΔV, Σ)` whose magnitude lies in
/// `[v_min, v_max]`. Blocks of samples use independent ChaCha streams.
pub fn verify_chance_satisfaction(
    delta_v: &DVector<f64>,
    est: &EstimationResult,
    spec: &ChanceSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>, ChanceError> {
    if n_samples == 0 {
        return Err(ChanceError::NoSamples);
    }
    let n = est.n();
    if delta_v.len() != 2 * n {
        return Err(ChanceError::Dimension {
            expected: 2 * n,
            got: delta_v.len(),
        });
    }
    let factor = psd_factor(&est.covariance, 1e-10).ok_or(ChanceError::NotPsd)?;
    let mean = est.v_est_rect() + delta_v;
    let blocks = n_samples.div_ceil(BLOCK);
    let hits = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(n_samples - b * BLOCK);
            let mut inside = vec![0u64; n];
            let mut z = DVector::zeros(2 * n);
            for _ in 0..count {
                z.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
                let v = &mean + &factor * &z;
                for (i, hit) in inside.iter_mut().enumerate() {
                    let m = v[i].hypot(v[n + i]);
                    if m >= spec.v_min && m <= spec.v_max {
                        *hit += 1;
                    }
                }
            }
            inside
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(hits.into_iter().map(|h| h as f64 / n_samples as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chance::tighten_constraints;
    use crate::powerflow::ComplexVoltageState;
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::Rng;

    fn estimate(v: &[Complex64], cov: DMatrix<f64>) -> EstimationResult {
        let src = [Complex64::new(1.0, 0.0); 3];
        let state = ComplexVoltageState::new(src, DVector::from_column_slice(v)).unwrap();
        EstimationResult::from_parts(state, cov).unwrap()
    }

    fn spec(alpha: f64) -> ChanceSpec {
        ChanceSpec::with_alpha(0.95, alpha, 0.95, 1.05).unwrap()
    }

    #[test]
    fn exact_boundary_is_admitted() {
        let v = Complex64::from_polar(1.0, 0.4);
        let est = estimate(&[v], DMatrix::zeros(2, 2));
        let set = tighten_constraints(&est, &spec(2.5)).unwrap();
        // |ΔV + V_est| = V_max along the estimate direction.
        let target = Complex64::from_polar(1.05, 0.4);
        let dv = DVector::from_vec(vec![target.re - v.re, target.im - v.im]);
        assert!(check_corner_sufficiency(&dv, &set));
    }

    #[test]
    fn one_violated_circle_fails() {
        let est = estimate(&[Complex64::new(1.0, 0.0)], DMatrix::from_diagonal_element(2, 2, 1e-4));
        let set = tighten_constraints(&est, &spec(2.0)).unwrap();
        // Corner (+,+) sits at 1.02 + 0.02j; push it just outside the circle.
        let r = 1.05f64;
        let dx = (r * r - 0.02f64.powi(2)).sqrt() - 1.02 + 1e-6;
        let dv = DVector::from_vec(vec![dx, 0.0]);
        assert!(!check_corner_sufficiency(&dv, &set));
        let violated = set.nodes[0].circles.iter().filter(|c| c.violation([dx, 0.0]) > 0.0).count();
        assert_eq!(violated, 2);
    }

    #[test]
    fn box_bounded_noise_stays_in_inner_region() {
        let v = Complex64::from_polar(0.99, -2.0);
        let (sr, si) = (0.006, 0.004);
        let est = estimate(&[v], DMatrix::from_diagonal(&DVector::from_vec(vec![sr * sr, si * si])));
        let alpha = 2.5;
        let set = tighten_constraints(&est, &spec(alpha)).unwrap();
        let dv = DVector::from_vec(vec![0.0, 0.0]);
        assert!(check_corner_sufficiency(&dv, &set));
        let n = set.nodes[0].half_planes[0].normal;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let wr = rng.random_range(-alpha * sr..=alpha * sr);
            let wi = rng.random_range(-alpha * si..=alpha * si);
            let x = [v.re + wr, v.im + wi];
            assert!(x[0].hypot(x[1]) <= 1.05 + 1e-12);
            assert!(n[0] * x[0] + n[1] * x[1] >= 0.95 - 1e-12);
        }
    }

    #[test]
    fn deterministic_pass_without_covariance() {
        let est = estimate(&[Complex64::new(1.0, 0.0), Complex64::from_polar(0.97, 2.0)], DMatrix::zeros(4, 4));
        let p = verify_chance_satisfaction(&DVector::zeros(4), &est, &spec(2.5), 1000, 1).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn mean_on_upper_limit_gives_half() {
        let s = 0.005;
        let v = Complex64::from_polar(1.0, 0.3);
        let est = estimate(&[v], DMatrix::from_diagonal_element(2, 2, s * s));
        let target = Complex64::from_polar(1.05, 0.3);
        let dv = DVector::from_vec(vec![target.re - v.re, target.im - v.im]);
        let p = verify_chance_satisfaction(&dv, &est, &spec(2.5), 100_000, 8).unwrap()[0];
        // Curvature of the circle makes the inside slightly more likely.
        assert!((p - 0.5).abs() < 0.01, "{p}");
    }

    #[test]
    fn same_seed_same_result() {
        let est = estimate(&[Complex64::new(1.04, 0.0)], DMatrix::from_diagonal_element(2, 2, 1e-4));
        let a = verify_chance_satisfaction(&DVector::zeros(2), &est, &spec(2.5), 10_000, 4).unwrap();
        let b = verify_chance_satisfaction(&DVector::zeros(2), &est, &spec(2.5), 10_000, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1e-4, 2e-4, 2e-4, 1e-4]);
        let est = estimate(&[Complex64::new(1.0, 0.0)], cov);
        assert_eq!(
            verify_chance_satisfaction(&DVector::zeros(2), &est, &spec(2.5), 10, 0),
            Err(ChanceError::NotPsd)
        );
        assert_eq!(
            verify_chance_satisfaction(&DVector::zeros(2), &est, &spec(2.5), 0, 0),
            Err(ChanceError::NoSamples)
        );
    }
}

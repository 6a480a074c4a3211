use nalgebra::{DMatrix, DVector};

use super::EstimationError;

/// Push a polar covariance through the Jacobian of `(m, θ) ↦ (m cos θ, m sin θ)`.
///
/// `sigma_polar` is laid out `[m; θ]`, the result `[Re; Im]`.
pub fn polar_to_rect_covariance(
    magnitudes: &DVector<f64>,
    angles: &DVector<f64>,
    sigma_polar: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EstimationError> {
    let n = magnitudes.len();
    if angles.len() != n {
        return Err(EstimationError::Dimension {
            expected: n,
            got: angles.len(),
        });
    }
    if sigma_polar.nrows() != 2 * n || sigma_polar.ncols() != 2 * n {
        return Err(EstimationError::Dimension {
            expected: 2 * n,
            got: sigma_polar.nrows(),
        });
    }
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (s, c) = angles[i].sin_cos();
        let m = magnitudes[i];
        j[(i, i)] = c;
        j[(i, n + i)] = -m * s;
        j[(n + i, i)] = s;
        j[(n + i, n + i)] = m * c;
    }
    Ok(&j * sigma_polar * j.transpose())
}

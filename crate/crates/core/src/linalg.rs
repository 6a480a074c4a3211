//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Factor `F` with `F Fᵀ = S` for a symmetric PSD `S`, via eigendecomposition.
///
/// Eigenvalues down to `-tol` are clipped to zero; anything more negative
/// returns `None`.
pub fn psd_factor(s: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return None;
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut f = eig.eigenvectors;
    for (j, r) in roots.iter().enumerate() {
        f.column_mut(j).scale_mut(*r);
    }
    Some(f)
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Symmetric diagonal equilibration: returns `d` such that `diag(d) K diag(d)`
/// has rows with unit max-abs entry (approximately).
pub fn equilibrate(k: &DMatrix<f64>) -> DVector<f64> {
    let n = k.nrows();
    let mut d = DVector::from_element(n, 1.0);
    for _ in 0..8 {
        let mut changed = false;
        for i in 0..n {
            let mut m = 0.0f64;
            for j in 0..n {
                m = m.max((d[i] * k[(i, j)] * d[j]).abs());
            }
            if m > 0.0 && (m - 1.0).abs() > 1e-3 {
                d[i] /= m.sqrt();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    d
}

/// Number of singular values below `rel_tol * σ_max`.
pub fn null_space_dim(k: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = k.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return k.nrows();
    }
    sv.iter().filter(|&&s| s <= rel_tol * max).count()
}

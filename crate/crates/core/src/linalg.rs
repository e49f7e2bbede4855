//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Result, SnError};

pub type Chol = Cholesky<f64, Dyn>;

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Chol> {
    if !m.is_square() {
        return Err(SnError::Dimension(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SnError::InvalidMatrix(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| SnError::Singular(format!("{what} is not positive definite")))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `vᵀ M⁻¹ v` from a Cholesky factor of `M`.
pub fn inv_quad_form(chol: &Chol, v: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let mut y = v.clone();
    // l_dirty may carry junk above the diagonal; the lower solve only reads
    // the lower triangle.
    l.solve_lower_triangular_mut(&mut y);
    y.norm_squared()
}

pub fn log_det(chol: &Chol) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn inverse(chol: &Chol) -> DMatrix<f64> {
    symmetrize(&chol.inverse())
}

/// Householder reflector `H = I − 2uuᵀ` with `H e₁ = v/‖v‖`.
/// Returns the identity when `v` already points along `e₁`.
pub fn householder_from_e1(v: &DVector<f64>) -> DMatrix<f64> {
    let k = v.len();
    let norm = v.norm();
    let mut h = DMatrix::identity(k, k);
    if norm == 0.0 {
        return h;
    }
    let mut u = -v / norm;
    u[0] += 1.0;
    let un = u.norm();
    if un < 1e-300 {
        return h;
    }
    u /= un;
    h -= &u * u.transpose() * 2.0;
    h
}

/// Submatrix picking the given rows and columns in order.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Numerical rank of a symmetric matrix from its eigenvalues.
pub fn symmetric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    eig.iter().filter(|v| v.abs() > rel_tol * scale.max(1.0)).count()
}

/// Frobenius-norm scale used for relative tolerances on matrix identities.
pub fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.norm().max(1.0)
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(SnError::Dimension(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Ordinary least squares `β̂ = (XᵀX)⁻¹Xᵀy` for each column of `y`.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let chol = cholesky(&xtx, "XᵀX").map_err(|_| SnError::Rank("design matrix is not of full column rank".into()))?;
    Ok(chol.solve(&(x.transpose() * y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn householder_maps_e1() {
        let v = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let h = householder_from_e1(&v);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let got = &h * e1;
        assert!((got - &v / v.norm()).norm() < 1e-14);
        assert!((&h * h.transpose() - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn quad_form_and_logdet() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = cholesky(&m, "m").unwrap();
        let v = DVector::from_vec(vec![1.0, -1.0]);
        let direct = (v.transpose() * m.clone().try_inverse().unwrap() * &v)[0];
        assert!((inv_quad_form(&c, &v) - direct).abs() < 1e-14);
        assert!((log_det(&c) - 1.75f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rank_of_projector() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(symmetric_rank(&p, 1e-10), 2);
        assert_eq!(symmetric_rank(&DMatrix::zeros(3, 3), 1e-10), 0);
    }
}

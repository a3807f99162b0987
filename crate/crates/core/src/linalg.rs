//! Small dense helpers shared by the weighting and solver code.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Relative pivot floor below which a Cholesky factor is treated as singular.
pub(crate) const PIVOT_TOL: f64 = 1e-13;

/// Cholesky factorization that also rejects numerically singular matrices:
/// every squared pivot must exceed `PIVOT_TOL * max(diag)`.
///
/// Returns `None` when the matrix is not (numerically) positive definite.
pub(crate) fn spd_factor(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > PIVOT_TOL * scale
    });
    ok.then_some(chol)
}

/// `(m + m') / 2`, removing rounding asymmetry from products like `A W A'`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_factor(&m).is_none());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(spd_factor(&m).is_some());
        assert!(spd_factor(&DMatrix::zeros(2, 2)).is_none());
    }
}

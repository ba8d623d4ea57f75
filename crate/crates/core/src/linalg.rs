//! Dense symmetric linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative diagonal jitter used for the one-shot retry of a failed SPD factorization.
const JITTER: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn mean_diag(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.trace() / m.nrows() as f64
}

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// A failed factorization is retried once after adding `1e-10 * mean(diag)` to the
/// diagonal; a second failure is reported as [`Error::IllConditioned`].
pub fn spd_cholesky(
    m: &DMatrix<f64>,
    what: &'static str,
    iteration: Option<usize>,
) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::IllConditioned { what, iteration });
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let jitter = JITTER * mean_diag(m).abs().max(f64::MIN_POSITIVE);
    let mut j = m.clone();
    for k in 0..j.nrows() {
        j[(k, k)] += jitter;
    }
    Cholesky::new(j).ok_or(Error::IllConditioned { what, iteration })
}

pub fn spd_inverse(
    m: &DMatrix<f64>,
    what: &'static str,
    iteration: Option<usize>,
) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(m, what, iteration)?.inverse()))
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in descending
/// order. Ties keep the solver's original index order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn max_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn check_square(m: &DMatrix<f64>, what: &'static str, dim: usize) -> Result<()> {
    if m.nrows() != dim {
        return Err(Error::Shape {
            what,
            expected: dim,
            found: m.nrows(),
        });
    }
    if m.ncols() != dim {
        return Err(Error::Shape {
            what,
            expected: dim,
            found: m.ncols(),
        });
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, what: &'static str, dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Shape {
            what,
            expected: dim,
            found: v.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_retry_rescues_borderline_psd() {
        // rank-1 PSD: plain Cholesky fails or is borderline; jittered retry must succeed
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        assert!(spd_cholesky(&m, "test", None).is_ok());
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            spd_cholesky(&neg, "test", Some(3)),
            Err(Error::IllConditioned {
                iteration: Some(3),
                ..
            })
        ));
    }

    #[test]
    fn sign_convention() {
        let mut m = DMatrix::from_row_slice(2, 2, &[0.1, -0.2, -0.9, 0.1]);
        fix_column_signs(&mut m);
        assert_eq!(m[(1, 0)], 0.9);
        assert_eq!(m[(0, 1)], 0.2);
    }
}

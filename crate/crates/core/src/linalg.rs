//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// The sort is stable, so exact ties keep the solver's original index order.
/// Each eigenvector is signed so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn sym_eigen_desc<T: Scalar>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut best = T::zero();
        let mut sign = T::one();
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = if v < T::zero() { -T::one() } else { T::one() };
            }
        }
        col *= sign;
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Symmetric positive semi-definite square root `V diag(sqrt(max(l,0))) V'`.
pub fn sym_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let (vals, vecs) = sym_eigen_desc(m);
    let d = DMatrix::from_diagonal(&vals.map(|l| l.max(T::zero()).sqrt()));
    &vecs * d * vecs.transpose()
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let min = vals.iter().copied().fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(b));
    if !(min > T::zero()) {
        return Err(Error::NotPd { min_eigenvalue: min.as_f64() });
    }
    let d = DMatrix::from_diagonal(&vals.map(|l| T::one() / l.sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range<T: Scalar>(m: &DMatrix<T>) -> (T, T) {
    let (vals, _) = sym_eigen_desc(m);
    (vals[vals.len() - 1], vals[0])
}

/// Condition number `l_max / l_min` of a symmetric PSD matrix (`inf` when
/// singular or indefinite).
pub fn sym_condition<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let (lo, hi) = eigen_range(m);
    if lo <= T::zero() {
        f64::INFINITY
    } else {
        (hi / lo).as_f64()
    }
}

/// Solves `x * gram = rhs` for `x` (i.e. `rhs * gram^{-1}`) with a symmetric
/// positive definite `gram`.
pub fn right_solve_spd<T: Scalar>(rhs: &DMatrix<T>, gram: &DMatrix<T>) -> Option<DMatrix<T>> {
    let chol = gram.clone().cholesky()?;
    // x gram = rhs  <=>  gram x' = rhs'
    Some(chol.solve(&rhs.transpose()).transpose())
}

pub fn trace<T: Scalar>(m: &DMatrix<T>) -> T {
    m.diagonal().sum()
}

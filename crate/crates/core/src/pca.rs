//! Principal-component estimation of the equivalent linear factor model and
//! eigenvalue-ratio selection of the number of factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::scalar::Scalar;
use crate::types::{FactorSpace, Panel};

/// Subtracts the time average of every series.
pub fn demean_panel<T: Scalar>(panel: &Panel<T>) -> Panel<T> {
    let x = panel.data();
    let t = T::from_usize_lossy(x.nrows());
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
    }
    // demeaning keeps entries finite and the shape unchanged
    Panel::new(out).expect("demeaned panel stays valid")
}

/// Uncentered second-moment matrix `T^{-1} sum_t x_t x_t'` (N x N).
pub fn sample_covariance<T: Scalar>(panel: &Panel<T>) -> DMatrix<T> {
    let x = panel.data();
    let t = T::from_usize_lossy(x.nrows());
    let mut s = x.transpose() * x / t;
    // exact symmetry
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (s[(i, j)] + s[(j, i)]) * T::lit(0.5);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Loadings `A = sqrt(N) * top-k eigenvectors`, factors `g_t = A' x_t / N`.
pub fn estimate_factor_space<T: Scalar>(panel: &Panel<T>, k: usize) -> Result<FactorSpace<T>> {
    let (t_len, n) = panel.data().shape();
    let max = n.min(t_len);
    if k == 0 || k > max {
        return Err(Error::KTooLarge { k, max });
    }
    let cov = sample_covariance(panel);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let nn = T::from_usize_lossy(n);
    let a_hat = vecs.columns(0, k).into_owned() * nn.sqrt();
    let g_hat = panel.data() * &a_hat / nn;
    let eigvals = DVector::from_iterator(k, vals.iter().take(k).copied());
    Ok(FactorSpace { a_hat, g_hat, eigvals })
}

/// Eigenvalue-ratio choice of the factor count: the `k` in `1..=k_max`
/// maximizing `mu_k / mu_{k+1}` (smallest `k` on ties). Eigenvalues below
/// `1e-12 * mu_1` count as zero; a positive eigenvalue followed by a zero one
/// gives an infinite ratio.
pub fn select_num_factors_er<T: Scalar>(panel: &Panel<T>, k_max: usize) -> Result<usize> {
    let (t_len, n) = panel.data().shape();
    let max = n.min(t_len).saturating_sub(1);
    if k_max == 0 || k_max > max {
        return Err(Error::KTooLarge { k: k_max, max });
    }
    let (vals, _) = sym_eigen_desc(&sample_covariance(panel));
    let floor = T::lit(1e-12) * vals[0].max(T::zero());
    let mu: Vec<f64> = vals
        .iter()
        .take(k_max + 1)
        .map(|&v| if v < floor || v <= T::zero() { 0.0 } else { v.as_f64() })
        .collect();
    let mut best_k = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let (num, den) = (mu[k - 1], mu[k]);
        let ratio = match (num > 0.0, den > 0.0) {
            (true, true) => num / den,
            (true, false) => f64::INFINITY,
            _ => 0.0,
        };
        if ratio > best_ratio {
            best_ratio = ratio;
            best_k = k;
        }
    }
    Ok(best_k)
}

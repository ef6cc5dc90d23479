//! Evaluation against simulated truth: rotation and bias matrices, the
//! bias-adjusted loading target, trace-R², common-component MSE and
//! regime-specific factors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::EmResult;
use crate::error::{Error, Result};
use crate::linalg::{right_solve_spd, trace};
use crate::scalar::Scalar;
use crate::simulate::SimTruth;
use crate::types::{FactorSpace, ModelParams, Panel, ProbabilityPath};

fn check_shape<T: Scalar>(what: &'static str, m: &DMatrix<T>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            what,
            expected: rows,
            actual: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what,
            expected: cols,
            actual: m.ncols(),
        });
    }
    Ok(())
}

/// `H = (G'G/T)(A'Â/N) V^{-1}`, where `V` holds the leading eigenvalues of
/// `(NT)^{-1} X'X`, i.e. `eigvals / N` for eigenvalues of `T^{-1} X'X`.
pub fn hat_h<T: Scalar>(g_true: &DMatrix<T>, a_true: &DMatrix<T>, a_hat: &DMatrix<T>, eigvals: &[T]) -> Result<DMatrix<T>> {
    let (t_len, k) = g_true.shape();
    let n = a_true.nrows();
    check_shape("true loadings", a_true, n, k)?;
    check_shape("estimated loadings", a_hat, n, k)?;
    if eigvals.len() != k {
        return Err(Error::DimensionMismatch {
            what: "eigenvalue count",
            expected: k,
            actual: eigvals.len(),
        });
    }
    let nf = T::from_usize_lossy(n);
    if eigvals.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::SingularV);
    }
    let ggt = g_true.transpose() * g_true / T::from_usize_lossy(t_len);
    let aa = a_true.transpose() * a_hat / nf;
    let mut h = ggt * aa;
    for (j, mut col) in h.column_iter_mut().enumerate() {
        col *= nf / eigvals[j];
    }
    Ok(h)
}

/// `I = (sum_t xi_t 1{s_t = regime} g_t g_t')(sum_t xi_t g_t g_t')^{-1}`.
pub fn hat_i_xi<T: Scalar>(smoothed_col: &[T], states: &[usize], regime: usize, g_hat: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (t_len, k) = g_hat.shape();
    for (what, len) in [("smoothed length", smoothed_col.len()), ("state count", states.len())] {
        if len != t_len {
            return Err(Error::DimensionMismatch {
                what,
                expected: t_len,
                actual: len,
            });
        }
    }
    let mut num = DMatrix::zeros(k, k);
    let mut den = DMatrix::zeros(k, k);
    for t in 0..t_len {
        let g = g_hat.row(t).transpose();
        let outer = &g * g.transpose() * smoothed_col[t];
        if states[t] == regime {
            num += &outer;
        }
        den += outer;
    }
    right_solve_spd(&num, &den).ok_or(Error::SingularGram {
        regime,
        condition: f64::INFINITY,
    })
}

/// `B* = B1 I + B2 (I_k - I)`.
pub fn bias_adjusted_target<T: Scalar>(b1: &DMatrix<T>, b2: &DMatrix<T>, i_xi: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (n, k) = b1.shape();
    check_shape("b2", b2, n, k)?;
    check_shape("bias matrix", i_xi, k, k)?;
    let id = DMatrix::<T>::identity(k, k);
    Ok(b1 * i_xi + b2 * (id - i_xi))
}

/// Share of `tr(B*'B*)` explained by projecting the columns of `B*` on the
/// span of `b_hat`.
pub fn r2_bstar<T: Scalar>(b_hat: &DMatrix<T>, b_star: &DMatrix<T>) -> Result<T> {
    if b_hat.nrows() != b_star.nrows() {
        return Err(Error::DimensionMismatch {
            what: "loading rows",
            expected: b_star.nrows(),
            actual: b_hat.nrows(),
        });
    }
    let gram = b_hat.transpose() * b_hat;
    let cross = b_star.transpose() * b_hat;
    let proj = right_solve_spd(&cross, &gram).ok_or(Error::SingularGram {
        regime: 0,
        condition: f64::INFINITY,
    })?;
    let explained = trace(&(proj * cross.transpose()));
    let total = trace(&(b_star.transpose() * b_star));
    if !(total > T::zero()) {
        return Err(Error::ZeroSignal);
    }
    Ok(explained / total)
}

/// `chi_t = xi_1t B1 g_t + xi_2t B2 g_t`.
pub fn chi_hat<T: Scalar>(params: &ModelParams<T>, path: &ProbabilityPath<T>, g_hat: &DMatrix<T>) -> Result<DMatrix<T>> {
    let t_len = g_hat.nrows();
    if path.t_len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "probability rows vs factor rows",
            expected: t_len,
            actual: path.t_len(),
        });
    }
    let mut fit = [g_hat * params.b1.transpose(), g_hat * params.b2.transpose()];
    for (j, m) in fit.iter_mut().enumerate() {
        for (t, mut row) in m.row_iter_mut().enumerate() {
            row *= path.smoothed[t][j];
        }
    }
    let [a, b] = fit;
    Ok(a + b)
}

/// `sum (chi_hat - chi)^2 / sum chi^2`.
pub fn mse_common<T: Scalar>(chi_hat: &DMatrix<T>, chi_true: &DMatrix<T>) -> Result<T> {
    check_shape("common component", chi_hat, chi_true.nrows(), chi_true.ncols())?;
    let denom = chi_true.norm_squared();
    if !(denom > T::zero()) {
        return Err(Error::ZeroSignal);
    }
    Ok((chi_hat - chi_true).norm_squared() / denom)
}

/// Columns of a regime's loadings used as `Lambda_j`: the first `r` for
/// regime 1, the last `r` for regime 2.
pub fn lambda_block<T: Scalar>(b: &DMatrix<T>, regime: usize, r: usize) -> DMatrix<T> {
    let k = b.ncols();
    let start = if regime == 0 { 0 } else { k - r };
    b.columns(start, r).into_owned()
}

/// `f_jt = xi_jt Lambda_j' x_t / N`.
pub fn regime_factors<T: Scalar>(panel: &Panel<T>, lambda: &DMatrix<T>, smoothed_col: &[T]) -> Result<DMatrix<T>> {
    let x = panel.data();
    let (t_len, n) = x.shape();
    if lambda.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "loading rows vs panel columns",
            expected: n,
            actual: lambda.nrows(),
        });
    }
    if smoothed_col.len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "smoothed length",
            expected: t_len,
            actual: smoothed_col.len(),
        });
    }
    let mut f = x * lambda / T::from_usize_lossy(n);
    for (t, mut row) in f.row_iter_mut().enumerate() {
        row *= smoothed_col[t];
    }
    Ok(f)
}

/// One replication's row of the Monte Carlo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p11: f64,
    pub p22: f64,
    pub xi1_bar: f64,
    pub xi2_bar: f64,
    pub r2_bstar: f64,
    pub mse_chi: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn evaluate<T: Scalar>(truth: &SimTruth<T>, fs: &FactorSpace<T>, result: &EmResult<T>) -> Result<MetricsReport> {
    let xi1 = result.path.smoothed_column(0);
    let i_xi = hat_i_xi(xi1.as_slice(), &truth.states, 0, &fs.g_hat)?;
    let b_star = bias_adjusted_target(&truth.b1_true(), &truth.b2_true(), &i_xi)?;
    let r2 = r2_bstar(&result.params.b1, &b_star)?;
    let chi = chi_hat(&result.params, &result.path, &fs.g_hat)?;
    let mse = mse_common(&chi, &truth.chi)?;
    let m = result.path.mean_smoothed();
    Ok(MetricsReport {
        p11: result.params.trans.p11().as_f64(),
        p22: result.params.trans.p22().as_f64(),
        xi1_bar: m[0].as_f64(),
        xi2_bar: m[1].as_f64(),
        r2_bstar: r2.as_f64(),
        mse_chi: mse.as_f64(),
        iterations: result.iterations,
        converged: result.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{EmConfig, run_em};
    use crate::pca::estimate_factor_space;
    use crate::rng::RngHandle;
    use crate::simulate::{SimConfig, simulate_panel};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngHandle::new(seed, 7).rng();
        DMatrix::from_fn(t, n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn noiseless_rotation_is_exact() {
        let a = random_matrix(40, 2, 1).map(|v| v + 1.0);
        let g = random_matrix(60, 2, 2);
        let panel = Panel::new(&g * a.transpose()).unwrap();
        let fs = estimate_factor_space(&panel, 2).unwrap();
        let h = hat_h(&g, &a, &fs.a_hat, fs.eigvals.as_slice()).unwrap();
        let h_inv = h.try_inverse().unwrap();
        let diff = &fs.g_hat.transpose() - h_inv * g.transpose();
        assert!(diff.abs().max() < 1e-8);
    }

    #[test]
    fn single_factor_rotation_is_positive() {
        let a = random_matrix(30, 1, 3).map(|v| v.abs() + 0.1);
        let g = random_matrix(50, 1, 4);
        let panel = Panel::new(&g * a.transpose()).unwrap();
        let fs = estimate_factor_space(&panel, 1).unwrap();
        let h = hat_h(&g, &a, &fs.a_hat, fs.eigvals.as_slice()).unwrap();
        assert!(h[(0, 0)] > 0.0);
        assert!(matches!(hat_h(&g, &a, &fs.a_hat, &[0.0]), Err(Error::SingularV)));
    }

    #[test]
    fn bias_matrix_limits() {
        let g = random_matrix(80, 2, 5);
        let states: Vec<usize> = (0..80).map(|t| usize::from(t % 3 == 0)).collect();
        let exact: Vec<f64> = states.iter().map(|&s| if s == 0 { 1.0 } else { 0.0 }).collect();
        let i = hat_i_xi(&exact, &states, 0, &g).unwrap();
        assert!((i - DMatrix::identity(2, 2)).abs().max() < 1e-12);

        let all_one = vec![0usize; 80];
        let w: Vec<f64> = (0..80).map(|t| 0.2 + 0.6 * ((t * 7) % 10) as f64 / 10.0).collect();
        let i = hat_i_xi(&w, &all_one, 0, &g).unwrap();
        assert!((i - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn bias_matrix_with_constant_weights_is_gram_share() {
        let g = random_matrix(200, 2, 6);
        let states: Vec<usize> = (0..200).map(|t| usize::from(t % 4 == 0)).collect();
        let i = hat_i_xi(&vec![0.5; 200], &states, 0, &g).unwrap();
        let mut num = DMatrix::zeros(2, 2);
        for t in (0..200).filter(|&t| states[t] == 0) {
            let row = g.row(t).transpose();
            num += &row * row.transpose();
        }
        let oracle = num * (g.transpose() * &g).try_inverse().unwrap();
        assert!((i - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn target_limits() {
        let b1 = random_matrix(5, 2, 7);
        let b2 = random_matrix(5, 2, 8);
        let id = DMatrix::identity(2, 2);
        assert_eq!(bias_adjusted_target(&b1, &b2, &id).unwrap(), b1);
        assert_eq!(bias_adjusted_target(&b1, &b2, &DMatrix::zeros(2, 2)).unwrap(), b2);
        let mid = bias_adjusted_target(&b1, &b2, &(id * 0.5)).unwrap();
        assert!((mid - (&b1 + &b2) * 0.5).abs().max() < 1e-15);
    }

    #[test]
    fn r2_examples() {
        let b = random_matrix(10, 2, 9);
        assert!((r2_bstar(&b, &b).unwrap() - 1.0).abs() < 1e-12);
        let mut orth = DMatrix::zeros(4, 1);
        orth[(0, 0)] = 1.0;
        let mut star = DMatrix::zeros(4, 1);
        star[(1, 0)] = 2.0;
        assert_eq!(r2_bstar(&orth, &star).unwrap(), 0.0);
        assert!(matches!(r2_bstar(&DMatrix::zeros(4, 1), &star), Err(Error::SingularGram { .. })));
    }

    proptest! {
        #[test]
        fn r2_is_span_invariant(seed in 0u64..10_000, k in 1usize..4) {
            let b = random_matrix(12, k, seed);
            let star = random_matrix(12, k, seed + 1);
            let m = random_matrix(k, k, seed + 2) + DMatrix::identity(k, k) * 3.0;
            let a = r2_bstar(&b, &star).unwrap();
            let c = r2_bstar(&(&b * m), &star).unwrap();
            prop_assert!((a - c).abs() < 1e-10);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn mse_examples() {
        let chi = random_matrix(6, 3, 10);
        assert_eq!(mse_common(&chi, &chi).unwrap(), 0.0);
        assert_eq!(mse_common(&DMatrix::zeros(6, 3), &chi).unwrap(), 1.0);
        assert!((mse_common(&(&chi * 2.0), &chi).unwrap() - 1.0).abs() < 1e-15);
        let err = random_matrix(6, 3, 11);
        let base = mse_common(&(&chi + &err), &chi).unwrap();
        let scaled = mse_common(&(&chi + &err * 3.0), &chi).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
        assert!(matches!(mse_common(&chi, &DMatrix::zeros(6, 3)), Err(Error::ZeroSignal)));
    }

    #[test]
    fn regime_factor_reductions() {
        let panel = Panel::new(random_matrix(30, 8, 12)).unwrap();
        let fs = estimate_factor_space(&panel, 2).unwrap();
        let f = regime_factors(&panel, &fs.a_hat, &[1.0; 30]).unwrap();
        assert!((f - &fs.g_hat).abs().max() < 1e-14);
        let f = regime_factors(&panel, &fs.a_hat, &[0.0; 30]).unwrap();
        assert_eq!(f, DMatrix::zeros(30, 2));
    }

    #[test]
    fn lambda_blocks() {
        let b = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0_f64]);
        assert_eq!(lambda_block(&b, 0, 2).as_slice(), &[1.0, 2.0]);
        assert_eq!(lambda_block(&b, 1, 2).as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn simulated_regime_factor_tracks_truth() {
        let truth = simulate_panel::<f64>(&SimConfig::baseline(100, 500, 1), RngHandle::new(31, 0)).unwrap();
        let fs = estimate_factor_space(&truth.panel, 2).unwrap();
        let res = run_em(&truth.panel, &fs, &EmConfig::default()).unwrap();
        let xi1 = res.path.smoothed_column(0);
        let f1 = regime_factors(&truth.panel, &lambda_block(&res.params.b1, 0, 1), xi1.as_slice()).unwrap();
        let idx: Vec<usize> = (0..500).filter(|&t| truth.states[t] == 0).collect();
        let a: Vec<f64> = idx.iter().map(|&t| f1[(t, 0)]).collect();
        let b: Vec<f64> = idx.iter().map(|&t| truth.f[(t, 0)]).collect();
        let corr = correlation(&a, &b).abs();
        assert!(corr >= 0.9, "corr {corr}");

        let report = evaluate(&truth, &fs, &res).unwrap();
        assert!(report.r2_bstar > 0.9 && report.mse_chi < 0.1, "{report:?}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }
}

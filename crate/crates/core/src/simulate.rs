//! Data-generating process for Monte Carlo experiments: a two-state Markov
//! chain, AR(1) factors shared across regimes, N(1,1) loadings rotated to a
//! diagonal Gram matrix, regime-specific banded idiosyncratic covariances and
//! AR(1) idiosyncratic innovations, calibrated to a target noise-to-signal
//! ratio.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigen_range, sym_eigen_desc, sym_inv_sqrt, sym_sqrt};
use crate::rng::RngHandle;
use crate::scalar::Scalar;
use crate::types::{Panel, TransitionMatrix, unconditional_probs};

fn default_noise_to_signal() -> f64 {
    0.5
}

/// Monte Carlo design. `r` factors per regime, shared factor path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub p11: f64,
    pub p22: f64,
    #[serde(default)]
    pub rho_f: f64,
    #[serde(default)]
    pub tau: f64,
    /// Upper bound of the per-series idiosyncratic AR coefficients; 0 disables.
    #[serde(default)]
    pub rho_idio_max: f64,
    #[serde(default = "default_noise_to_signal")]
    pub noise_to_signal: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// Baseline design: p11 = 0.9, p22 = 0.7, no serial or cross correlation.
    pub fn baseline(n: usize, t: usize, r: usize) -> Self {
        Self {
            n,
            t,
            r,
            p11: 0.9,
            p22: 0.7,
            rho_f: 0.0,
            tau: 0.0,
            rho_idio_max: 0.0,
            noise_to_signal: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.r == 0 {
            return bad("r must be at least 1");
        }
        if self.n < 2 || self.t < 2 {
            return bad("n and t must be at least 2");
        }
        if self.n < self.r {
            return bad("n must be at least r");
        }
        for (name, p) in [("p11", self.p11), ("p22", self.p22)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.rho_f) {
            return bad("rho_f must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rho_idio_max) {
            return bad("rho_idio_max must lie in [0, 1)");
        }
        if !(self.noise_to_signal > 0.0 && self.noise_to_signal.is_finite()) {
            return bad("noise_to_signal must be positive");
        }
        Ok(())
    }
}

/// Everything generated for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth<T: Scalar> {
    pub panel: Panel<T>,
    /// Zero-based regime per period (0 = state 1, 1 = state 2).
    pub states: Vec<usize>,
    /// `T x 2` one-hot state indicators.
    pub xi: DMatrix<T>,
    /// `T x r` factors.
    pub f: DMatrix<T>,
    pub lambda1: DMatrix<T>,
    pub lambda2: DMatrix<T>,
    /// `T x N` common component.
    pub chi: DMatrix<T>,
    /// `T x N` idiosyncratic component (after noise-to-signal scaling).
    pub e: DMatrix<T>,
}

impl<T: Scalar> SimTruth<T> {
    pub fn r(&self) -> usize {
        self.f.ncols()
    }

    /// Factors of the linear representation, `g_t = (f_t 1{s_t=1}, f_t 1{s_t=2})`.
    pub fn g_true(&self) -> DMatrix<T> {
        let (t_len, r) = self.f.shape();
        DMatrix::from_fn(t_len, 2 * r, |t, c| {
            let regime = c / r;
            if self.states[t] == regime {
                self.f[(t, c % r)]
            } else {
                T::zero()
            }
        })
    }

    /// Loadings of the linear representation, `A = [L1 L2]`.
    pub fn a_true(&self) -> DMatrix<T> {
        let (n, r) = self.lambda1.shape();
        let mut a = DMatrix::zeros(n, 2 * r);
        a.columns_mut(0, r).copy_from(&self.lambda1);
        a.columns_mut(r, r).copy_from(&self.lambda2);
        a
    }

    /// `B_1 = [L1 0]`.
    pub fn b1_true(&self) -> DMatrix<T> {
        let (n, r) = self.lambda1.shape();
        let mut b = DMatrix::zeros(n, 2 * r);
        b.columns_mut(0, r).copy_from(&self.lambda1);
        b
    }

    /// `B_2 = [0 L2]`.
    pub fn b2_true(&self) -> DMatrix<T> {
        let (n, r) = self.lambda2.shape();
        let mut b = DMatrix::zeros(n, 2 * r);
        b.columns_mut(r, r).copy_from(&self.lambda2);
        b
    }

    /// Realized `N^{-1} sum_i (sum_t e_it^2 / sum_t chi_it^2)`.
    pub fn noise_to_signal(&self) -> T {
        noise_to_signal_ratio(&self.e, &self.chi)
    }
}

fn noise_to_signal_ratio<T: Scalar>(e: &DMatrix<T>, chi: &DMatrix<T>) -> T {
    let n = e.ncols();
    let mut acc = T::zero();
    for i in 0..n {
        acc += e.column(i).norm_squared() / chi.column(i).norm_squared();
    }
    acc / T::from_usize_lossy(n)
}

fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> T {
    let u: f64 = rng.random();
    T::lit(lo + (hi - lo) * u)
}

/// Two-state chain with `P = [[p11, 1-p11], [1-p22, p22]]`. The first state
/// is drawn from the stationary distribution. Returns zero-based states and
/// the `t x 2` indicator matrix.
pub fn simulate_chain<T: Scalar, R: Rng + ?Sized>(
    p11: f64,
    p22: f64,
    t: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, DMatrix<T>)> {
    if !(p11 > 0.0 && p11 < 1.0 && p22 > 0.0 && p22 < 1.0) {
        return Err(Error::InvalidConfig("p11 and p22 must lie in (0, 1)".into()));
    }
    if t == 0 {
        return Err(Error::InvalidConfig("chain length must be positive".into()));
    }
    let trans = TransitionMatrix::from_diagonal(p11, p22)?;
    let pi1 = unconditional_probs(&trans)?.get(0);
    let p21 = 1.0 - p22;
    let mut states = Vec::with_capacity(t);
    let u: f64 = rng.random();
    states.push(if u <= pi1 { 0 } else { 1 });
    for s in 1..t {
        let u: f64 = rng.random();
        let prev = states[s - 1];
        let stay_or_enter_one = if prev == 0 { u <= p11 } else { u <= p21 };
        states.push(if stay_or_enter_one { 0 } else { 1 });
    }
    let xi = DMatrix::from_fn(t, 2, |s, j| if states[s] == j { T::one() } else { T::zero() });
    Ok((states, xi))
}

/// AR(1) factors `f_it = rho_f f_i,t-1 + z_it`, whitened so that
/// `T^{-1} F'F = I_r` exactly.
pub fn simulate_factors<T: Scalar, R: Rng + ?Sized>(
    t: usize,
    r: usize,
    rho_f: f64,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    if !(0.0..1.0).contains(&rho_f) {
        return Err(Error::InvalidConfig("rho_f must lie in [0, 1)".into()));
    }
    if t < r || r == 0 {
        return Err(Error::RankDeficient(format!("cannot whiten {r} factors from {t} periods")));
    }
    let raw = ar1_columns::<T, R>(t, r, |_| rho_f, rng);
    whiten(&raw)
}

/// Independent stationary AR(1) columns with standard normal innovations.
fn ar1_columns<T: Scalar, R: Rng + ?Sized>(
    t: usize,
    cols: usize,
    coef: impl Fn(usize) -> f64,
    rng: &mut R,
) -> DMatrix<T> {
    let mut m = DMatrix::zeros(t, cols);
    for c in 0..cols {
        let rho = T::lit(coef(c));
        let start_sd = (T::one() - rho * rho).sqrt();
        let z: T = normal(rng);
        m[(0, c)] = z / start_sd;
        for s in 1..t {
            let z: T = normal(rng);
            m[(s, c)] = rho * m[(s - 1, c)] + z;
        }
    }
    m
}

fn whiten<T: Scalar>(raw: &DMatrix<T>) -> Result<DMatrix<T>> {
    let t = T::from_usize_lossy(raw.nrows());
    let second = raw.transpose() * raw / t;
    let w = sym_inv_sqrt(&second)
        .map_err(|_| Error::RankDeficient("factor second-moment matrix is singular".into()))?;
    Ok(raw * w)
}

/// N(1,1) loadings for both regimes, each post-multiplied by the eigenvector
/// matrix of its own Gram matrix so that `L_j' L_j` is diagonal.
pub fn simulate_loadings<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    r: usize,
    rng: &mut R,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if n < r || r == 0 {
        return Err(Error::InvalidConfig(format!("need n >= r >= 1, got n={n}, r={r}")));
    }
    let draw = |rng: &mut R| {
        let raw = DMatrix::from_fn(n, r, |_, _| T::one() + normal::<T, R>(rng));
        let gram = raw.transpose() * &raw;
        let (_, vecs) = sym_eigen_desc(&gram);
        raw * vecs
    };
    let l1 = draw(rng);
    let l2 = draw(rng);
    Ok((l1, l2))
}

/// Banded Toeplitz matrix with `bands[d]` on the `d`-th diagonal (0 = main).
fn banded_toeplitz<T: Scalar>(n: usize, bands: &[T]) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        bands.get(d).copied().unwrap_or_else(T::zero)
    })
}

/// Regime idiosyncratic covariances `S_j = S_j,a + S_j,b`.
///
/// `S_1,a = diag(U[0.25,1.25])`, `S_2,a = diag(U[0.75,1.75])`. The banded
/// parts count diagonals from the main one: `S_1,b` has `tau, tau^2` on
/// diagonals 0 and 1, `S_2,b` has `1, tau, tau^2` on diagonals 0, 1 and 2.
/// Both banded parts vanish when `tau = 0`.
pub fn build_idio_covariances<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    tau: f64,
    rng: &mut R,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidConfig("tau must lie in [0, 1)".into()));
    }
    let d1 = DVector::from_fn(n, |_, _| uniform::<T, R>(rng, 0.25, 1.25));
    let d2 = DVector::from_fn(n, |_, _| uniform::<T, R>(rng, 0.75, 1.75));
    let mut s1 = DMatrix::from_diagonal(&d1);
    let mut s2 = DMatrix::from_diagonal(&d2);
    if tau > 0.0 {
        let tt = T::lit(tau);
        // diagonal k (1-based) carries tau^k for S_1,b and tau^(k-1) for S_2,b
        s1 += banded_toeplitz(n, &[tt, tt * tt]);
        s2 += banded_toeplitz(n, &[T::one(), tt, tt * tt]);
    }
    for s in [&s1, &s2] {
        let (lo, _) = eigen_range(s);
        if lo <= T::zero() {
            return Err(Error::NotPd { min_eigenvalue: lo.as_f64() });
        }
    }
    Ok((s1, s2))
}

/// `e_t = S_{s_t}^{1/2} nu_t` with per-series AR(1) innovations `nu`,
/// `rho_i ~ U[0, rho_idio_max]`, each `nu` column scaled to unit second moment.
pub fn simulate_idiosyncratic<T: Scalar, R: Rng + ?Sized>(
    sigma_e1: &DMatrix<T>,
    sigma_e2: &DMatrix<T>,
    states: &[usize],
    rho_idio_max: f64,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let n = sigma_e1.nrows();
    for s in [sigma_e1, sigma_e2] {
        if s.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "idiosyncratic covariance",
                expected: n,
                actual: s.nrows(),
            });
        }
        let (lo, _) = eigen_range(s);
        if lo <= T::zero() {
            return Err(Error::NotPd { min_eigenvalue: lo.as_f64() });
        }
    }
    if !(0.0..1.0).contains(&rho_idio_max) {
        return Err(Error::InvalidConfig("rho_idio_max must lie in [0, 1)".into()));
    }
    let t = states.len();
    let rhos: Vec<f64> = (0..n)
        .map(|_| if rho_idio_max > 0.0 { rng.random::<f64>() * rho_idio_max } else { 0.0 })
        .collect();
    let mut nu = ar1_columns::<T, R>(t, n, |i| rhos[i], rng);
    let tt = T::from_usize_lossy(t);
    for mut col in nu.column_iter_mut() {
        let scale = (col.norm_squared() / tt).sqrt();
        col /= scale;
    }
    let roots = [sym_sqrt(sigma_e1), sym_sqrt(sigma_e2)];
    // row t of nu * S (S symmetric) is (S nu_t)'
    let mixed = [&nu * &roots[0], &nu * &roots[1]];
    Ok(DMatrix::from_fn(t, n, |s, i| mixed[states[s]][(s, i)]))
}

/// Full replication: chain, factors, loadings, covariances, idiosyncratic
/// terms, and the scalar rescaling of `e` hitting the noise-to-signal target.
pub fn simulate_panel<T: Scalar>(cfg: &SimConfig, handle: RngHandle) -> Result<SimTruth<T>> {
    cfg.validate()?;
    let mut rng = handle.rng();
    let (states, xi) = simulate_chain::<T, _>(cfg.p11, cfg.p22, cfg.t, &mut rng)?;
    let f = simulate_factors::<T, _>(cfg.t, cfg.r, cfg.rho_f, &mut rng)?;
    let (lambda1, lambda2) = simulate_loadings::<T, _>(cfg.n, cfg.r, &mut rng)?;
    let (s1, s2) = build_idio_covariances::<T, _>(cfg.n, cfg.tau, &mut rng)?;
    let e_raw = simulate_idiosyncratic(&s1, &s2, &states, cfg.rho_idio_max, &mut rng)?;

    let fitted = [&f * lambda1.transpose(), &f * lambda2.transpose()];
    let chi = DMatrix::from_fn(cfg.t, cfg.n, |s, i| fitted[states[s]][(s, i)]);

    let raw_ratio = noise_to_signal_ratio(&e_raw, &chi);
    let c = (T::lit(cfg.noise_to_signal) / raw_ratio).sqrt();
    let e = e_raw * c;
    let panel = Panel::new(&chi + &e)?;
    Ok(SimTruth {
        panel,
        states,
        xi,
        f,
        lambda1,
        lambda2,
        chi,
        e,
    })
}

//! Brute-force posterior over every state path, used to check the
//! recursive filter and smoother on small instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::expected_loglik;
use crate::error::{Error, Result};
use crate::filter::{LogDensitySeries, filter_smooth, log_eta_matrix};
use crate::rng::RngHandle;
use crate::scalar::{Scalar, log_sum_exp, neg_infinity};
use crate::types::{ModelParams, StateProbabilities, TransitionMatrix, cross_index};

/// Longest series the enumeration accepts.
pub const MAX_ENUMERATION_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior<T: Scalar> {
    pub loglik: T,
    pub smoothed: Vec<[T; 2]>,
    /// Same layout as the smoother's cross-probabilities; row 1 pairs
    /// `s_1` with `s_0`.
    pub cross: Vec<[T; 4]>,
    /// Posterior expectation of the complete-data log-likelihood, without
    /// the `log xi0` term.
    pub expected_loglik: T,
}

/// Sums over all `2^{T+1}` paths `s_0, ..., s_T`.
pub fn enumerate_posterior<T: Scalar>(
    log_eta: &LogDensitySeries<T>,
    trans: &TransitionMatrix<T>,
    xi0: &StateProbabilities<T>,
) -> Result<ExactPosterior<T>> {
    let t_len = log_eta.t_len();
    if t_len > MAX_ENUMERATION_LEN {
        return Err(Error::TooLong {
            t: t_len,
            max: MAX_ENUMERATION_LEN,
        });
    }
    let n_paths = 1usize << (t_len + 1);
    let state = |path: usize, t: usize| (path >> t) & 1;
    let ln = |p: T| if p > T::zero() { p.ln() } else { neg_infinity() };

    // log weight and complete-data log-likelihood of every path
    let mut weights = Vec::with_capacity(n_paths);
    let mut complete = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let mut w = ln(xi0.get(state(path, 0)));
        let mut c = T::zero();
        for t in 1..=t_len {
            let (prev, cur) = (state(path, t - 1), state(path, t));
            let step = ln(trans.get(prev, cur)) + log_eta.values[t - 1][cur];
            w += step;
            c += step;
        }
        weights.push(w);
        complete.push(c);
    }
    let log_total = log_sum_exp(&weights);
    if !log_total.is_finite() {
        return Err(Error::DegeneratePrediction { t: 0 });
    }

    let mut smoothed = vec![[T::zero(); 2]; t_len];
    let mut cross = vec![[T::zero(); 4]; t_len];
    let mut q = T::zero();
    for path in 0..n_paths {
        let p = (weights[path] - log_total).exp();
        if p == T::zero() {
            continue;
        }
        q += p * complete[path];
        for t in 1..=t_len {
            let (prev, cur) = (state(path, t - 1), state(path, t));
            smoothed[t - 1][cur] += p;
            cross[t - 1][cross_index(cur, prev)] += p;
        }
    }
    Ok(ExactPosterior {
        loglik: log_total,
        smoothed,
        cross,
        expected_loglik: q,
    })
}

/// Largest absolute deviations between the recursions and the enumeration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub max_loglik_dev: f64,
    pub max_smoothed_dev: f64,
    pub max_cross_dev: f64,
    pub max_expected_loglik_dev: f64,
}

impl VerifyReport {
    pub fn max(&self) -> f64 {
        self.max_loglik_dev
            .max(self.max_smoothed_dev)
            .max(self.max_cross_dev)
            .max(self.max_expected_loglik_dev)
    }
}

/// A random small model: panel, factors, parameters and start distribution.
pub struct RandomInstance {
    pub x: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub params: ModelParams<f64>,
    pub xi0: StateProbabilities<f64>,
}

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, t: usize) -> Result<RandomInstance> {
    let k = rng.random_range(1..=2);
    let mut normal = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = normal(t, n);
    let g = normal(t, k);
    let b1 = normal(n, k);
    let b2 = normal(n, k);
    let sigma_e1 = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.0));
    let sigma_e2 = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.0));
    let p11 = rng.random_range(0.05..0.95);
    let p22 = rng.random_range(0.05..0.95);
    let a: f64 = rng.random();
    Ok(RandomInstance {
        x,
        g,
        params: ModelParams {
            b1,
            b2,
            sigma_e1,
            sigma_e2,
            trans: TransitionMatrix::from_diagonal(p11, p22)?,
        },
        xi0: StateProbabilities::new([a, 1.0 - a])?,
    })
}

/// Compares filter, smoother, cross-probabilities and the expected
/// log-likelihood against enumeration on random instances with
/// `N in 1..=4` and `T in 2..=8`.
pub fn verify_suite(instances: usize, handle: RngHandle) -> Result<VerifyReport> {
    let mut rng = handle.rng();
    let mut report = VerifyReport {
        instances,
        ..VerifyReport::default()
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=4);
        let t = rng.random_range(2..=8);
        let inst = random_instance(&mut rng, n, t)?;
        let le = log_eta_matrix(&inst.x, &inst.g, &inst.params)?;
        let path = filter_smooth(&le, &inst.params.trans, &inst.xi0)?;
        let q = expected_loglik(&le, &path.smoothed, &path.cross, &inst.params.trans)?;
        let exact = enumerate_posterior(&le, &inst.params.trans, &inst.xi0)?;

        let dev = |a: f64, b: f64| (a - b).abs();
        report.max_loglik_dev = report.max_loglik_dev.max(dev(path.loglik, exact.loglik));
        report.max_expected_loglik_dev = report.max_expected_loglik_dev.max(dev(q, exact.expected_loglik));
        for s in 0..t {
            for j in 0..2 {
                report.max_smoothed_dev = report.max_smoothed_dev.max(dev(path.smoothed[s][j], exact.smoothed[s][j]));
            }
            for c in 0..4 {
                report.max_cross_dev = report.max_cross_dev.max(dev(path.cross[s][c], exact.cross[s][c]));
            }
        }
    }
    Ok(report)
}

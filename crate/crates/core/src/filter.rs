//! Hamilton filter, Kim smoother and smoothed cross-probabilities for the
//! two-regime model, with regime densities kept in log space.
//!
//! Gaussian densities of an `N`-dimensional observation underflow once `N`
//! reaches a few hundred, so the update step normalizes `log eta + log xi`
//! with log-sum-exp. The resulting probabilities are O(1) and the backward
//! pass runs in linear arithmetic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, log_sum_exp, neg_infinity};
use crate::types::{ModelParams, Panel, ProbabilityPath, StateProbabilities, TransitionMatrix, cross_index};

/// Divisions by predicted probabilities below this value are guarded.
const PREDICTED_FLOOR: f64 = 1e-300;

/// `T x 2` log regime densities `log f(x_t | s_t = j, g_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensitySeries<T: Scalar> {
    pub values: Vec<[T; 2]>,
}

impl<T: Scalar> LogDensitySeries<T> {
    pub fn new(values: Vec<[T; 2]>) -> Result<Self> {
        for (t, row) in values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: t, col: j });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn t_len(&self) -> usize {
        self.values.len()
    }

    pub fn swapped(&self) -> Self {
        Self {
            values: self.values.iter().map(|r| [r[1], r[0]]).collect(),
        }
    }
}

/// Forward pass output.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<T: Scalar> {
    pub predicted: Vec<[T; 2]>,
    pub filtered: Vec<[T; 2]>,
    pub loglik: T,
}

/// Gaussian log densities with diagonal covariance, including the
/// `-(N/2) log(2 pi)` constant.
pub fn log_eta<T: Scalar>(panel: &Panel<T>, g_hat: &DMatrix<T>, params: &ModelParams<T>) -> Result<LogDensitySeries<T>> {
    log_eta_matrix(panel.data(), g_hat, params)
}

/// [`log_eta`] on a raw `T x N` matrix, which may have a single column.
pub fn log_eta_matrix<T: Scalar>(x: &DMatrix<T>, g_hat: &DMatrix<T>, params: &ModelParams<T>) -> Result<LogDensitySeries<T>> {
    let (t_len, n) = x.shape();
    if g_hat.nrows() != t_len {
        return Err(Error::DimensionMismatch {
            what: "factor rows vs panel rows",
            expected: t_len,
            actual: g_hat.nrows(),
        });
    }
    if params.n_len() != n || params.b2.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "loading rows vs panel columns",
            expected: n,
            actual: params.n_len(),
        });
    }
    for b in [&params.b1, &params.b2] {
        if b.ncols() != g_hat.ncols() {
            return Err(Error::DimensionMismatch {
                what: "loading columns vs factor count",
                expected: g_hat.ncols(),
                actual: b.ncols(),
            });
        }
    }
    for s in [&params.sigma_e1, &params.sigma_e2] {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                what: "variance vector length",
                expected: n,
                actual: s.len(),
            });
        }
    }
    let half = T::lit(0.5);
    let base = -T::from_usize_lossy(n) * half * T::two_pi().ln();
    let mut cols = [vec![T::zero(); t_len], vec![T::zero(); t_len]];
    for (j, col) in cols.iter_mut().enumerate() {
        let b = params.loadings(j);
        let var = params.variances(j);
        let inv: Vec<T> = var.iter().map(|&s| T::one() / s).collect();
        let log_det: T = var.iter().map(|s| s.ln()).fold(T::zero(), |a, b| a + b);
        let fitted = g_hat * b.transpose();
        for t in 0..t_len {
            let mut quad = T::zero();
            for i in 0..n {
                let r = x[(t, i)] - fitted[(t, i)];
                quad += r * r * inv[i];
            }
            col[t] = base - half * log_det - half * quad;
        }
    }
    LogDensitySeries::new((0..t_len).map(|t| [cols[0][t], cols[1][t]]).collect())
}

/// Forward recursion `xi_{t|t-1} = P' xi_{t-1|t-1}`,
/// `xi_{t|t} ∝ eta_t ⊙ xi_{t|t-1}`, started from `xi0 = xi_{0|0}`.
pub fn hamilton_filter<T: Scalar>(
    log_eta: &LogDensitySeries<T>,
    trans: &TransitionMatrix<T>,
    xi0: &StateProbabilities<T>,
) -> Result<FilterOutput<T>> {
    let t_len = log_eta.t_len();
    let mut predicted = Vec::with_capacity(t_len);
    let mut filtered = Vec::with_capacity(t_len);
    let mut loglik = T::zero();
    let mut prev = xi0.values();
    for (t, le) in log_eta.values.iter().enumerate() {
        let pred = trans.predict(prev);
        let log_num = [0, 1].map(|j| {
            if pred[j] > T::zero() {
                le[j] + pred[j].ln()
            } else {
                neg_infinity()
            }
        });
        let log_norm = log_sum_exp(&log_num);
        if !log_norm.is_finite() {
            return Err(Error::DegeneratePrediction { t });
        }
        let p0 = (log_num[0] - log_norm).exp();
        let p1 = (log_num[1] - log_norm).exp();
        // renormalize away the last rounding bit
        let s = p0 + p1;
        let filt = [p0 / s, p1 / s];
        loglik += log_norm;
        predicted.push(pred);
        filtered.push(filt);
        prev = filt;
    }
    Ok(FilterOutput { predicted, filtered, loglik })
}

/// `numerator / predicted` with the zero-prior guard: a vanishing predicted
/// probability is acceptable only when the numerator vanishes too.
#[inline]
fn guarded_ratio<T: Scalar>(num: T, pred: T, t: usize, regime: usize) -> Result<T> {
    if pred < T::lit(PREDICTED_FLOOR) {
        if num > T::zero() {
            return Err(Error::ZeroPredicted { t, regime });
        }
        return Ok(T::zero());
    }
    Ok(num / pred)
}

/// Backward recursion `xi_{t|T} = [P (xi_{t+1|T} ⊘ xi_{t+1|t})] ⊙ xi_{t|t}`,
/// initialized at `xi_{T|T}`.
pub fn kim_smoother<T: Scalar>(
    predicted: &[[T; 2]],
    filtered: &[[T; 2]],
    trans: &TransitionMatrix<T>,
) -> Result<Vec<[T; 2]>> {
    let t_len = filtered.len();
    if predicted.len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "predicted vs filtered length",
            expected: t_len,
            actual: predicted.len(),
        });
    }
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let mut smoothed = vec![[T::zero(); 2]; t_len];
    smoothed[t_len - 1] = filtered[t_len - 1];
    for t in (0..t_len - 1).rev() {
        let ratio = [
            guarded_ratio(smoothed[t + 1][0], predicted[t + 1][0], t + 1, 0)?,
            guarded_ratio(smoothed[t + 1][1], predicted[t + 1][1], t + 1, 1)?,
        ];
        let mut row = [T::zero(); 2];
        for (i, v) in row.iter_mut().enumerate() {
            *v = filtered[t][i] * (trans.get(i, 0) * ratio[0] + trans.get(i, 1) * ratio[1]);
        }
        let s = row[0] + row[1];
        smoothed[t] = [row[0] / s, row[1] / s];
    }
    Ok(smoothed)
}

/// Joint posteriors `P(s_t = j, s_{t-1} = i | X) = p_ij (xi_{j,t|T} / xi_{j,t|t-1}) xi_{i,t-1|t-1}`
/// for every `t`, ordered (1,1), (2,1), (1,2), (2,2). The first row pairs
/// `s_1` with `s_0`, whose filtered distribution is `xi0`.
pub fn smoothed_cross_probs<T: Scalar>(
    predicted: &[[T; 2]],
    filtered: &[[T; 2]],
    smoothed: &[[T; 2]],
    trans: &TransitionMatrix<T>,
    xi0: &StateProbabilities<T>,
) -> Result<Vec<[T; 4]>> {
    let t_len = smoothed.len();
    if predicted.len() != t_len || filtered.len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "probability path lengths",
            expected: t_len,
            actual: predicted.len().min(filtered.len()),
        });
    }
    let mut cross = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prev = if t == 0 { xi0.values() } else { filtered[t - 1] };
        let ratio = [
            guarded_ratio(smoothed[t][0], predicted[t][0], t, 0)?,
            guarded_ratio(smoothed[t][1], predicted[t][1], t, 1)?,
        ];
        let mut row = [T::zero(); 4];
        for i in 0..2 {
            for j in 0..2 {
                row[cross_index(j, i)] = trans.get(i, j) * ratio[j] * prev[i];
            }
        }
        let s = row.iter().fold(T::zero(), |a, &b| a + b);
        cross.push(row.map(|v| v / s));
    }
    Ok(cross)
}

/// Filter, smoother and cross-probabilities in one pass.
pub fn filter_smooth<T: Scalar>(
    log_eta: &LogDensitySeries<T>,
    trans: &TransitionMatrix<T>,
    xi0: &StateProbabilities<T>,
) -> Result<ProbabilityPath<T>> {
    let FilterOutput { predicted, filtered, loglik } = hamilton_filter(log_eta, trans, xi0)?;
    let smoothed = kim_smoother(&predicted, &filtered, trans)?;
    let cross = smoothed_cross_probs(&predicted, &filtered, &smoothed, trans, xi0)?;
    Ok(ProbabilityPath {
        predicted,
        filtered,
        smoothed,
        cross,
        loglik,
        initial: *xi0,
    })
}

//! Domain types shared by every module: panels, transition matrices, state
//! probabilities, model parameters, factor spaces and probability paths.
//!
//! Storage is time-major throughout: row `t` of a panel is the cross-section
//! observed at time `t`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance used when validating that probabilities add up to one.
fn sum_tolerance<T: Scalar>() -> T {
    let eps = T::default_epsilon() * T::lit(16.0);
    T::lit(1e-12).max(eps)
}

/// A validated `T x N` panel of finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T: Scalar> {
    data: DMatrix<T>,
}

impl<T: Scalar> Panel<T> {
    /// Validates `data` (rows are time periods, columns are series).
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        validate_panel(data)
    }

    /// Builds a panel from row vectors, one per time period.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "panel row length",
                    expected: n,
                    actual: rows[i].len(),
                });
            }
        }
        validate_panel(DMatrix::from_fn(t, n, |i, j| rows[i][j]))
    }

    pub fn t_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_len(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.data
    }

    /// Grand sample variance of all entries (divisor `T*N`).
    pub fn grand_variance(&self) -> T {
        let count = T::from_usize_lossy(self.data.len());
        let mean = self.data.sum() / count;
        self.data.iter().map(|&x| (x - mean) * (x - mean)).fold(T::zero(), |a, b| a + b) / count
    }

    /// Lower bound for idiosyncratic variances: `1e-10` times the grand
    /// sample variance (or a tiny positive constant for a constant panel).
    pub fn variance_floor(&self) -> T {
        let floor = T::lit(1e-10) * self.grand_variance();
        let fallback = T::default_epsilon() * T::default_epsilon();
        floor.max(fallback)
    }
}

/// Checks the panel invariants: `T >= 2`, `N >= 2` and every entry finite.
pub fn validate_panel<T: Scalar>(data: DMatrix<T>) -> Result<Panel<T>> {
    let (t, n) = data.shape();
    if t < 2 || n < 2 {
        return Err(Error::TooSmall { t, n });
    }
    for row in 0..t {
        for col in 0..n {
            if !data[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(Panel { data })
}

/// Row-stochastic 2x2 matrix with `p[i][j] = P(s_{t+1} = j | s_t = i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix<T: Scalar> {
    p: [[T; 2]; 2],
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn new(p: [[T; 2]; 2]) -> Result<Self> {
        let tol = sum_tolerance::<T>();
        for (i, row) in p.iter().enumerate() {
            for &v in row {
                if !v.is_finite() || v < T::zero() || v > T::one() {
                    return Err(Error::InvalidProbability(format!(
                        "transition entry {v} in row {} outside [0, 1]",
                        i + 1
                    )));
                }
            }
            if (row[0] + row[1] - T::one()).abs() > tol {
                return Err(Error::InvalidProbability(format!(
                    "transition row {} sums to {}",
                    i + 1,
                    row[0] + row[1]
                )));
            }
        }
        Ok(Self { p })
    }

    /// `[[p11, 1-p11], [1-p22, p22]]`.
    pub fn from_diagonal(p11: T, p22: T) -> Result<Self> {
        Self::new([[p11, T::one() - p11], [T::one() - p22, p22]])
    }

    /// Entry `p_ij` with zero-based regime indices.
    #[inline]
    pub fn get(&self, from: usize, to: usize) -> T {
        self.p[from][to]
    }

    pub fn p11(&self) -> T {
        self.p[0][0]
    }

    pub fn p22(&self) -> T {
        self.p[1][1]
    }

    pub fn as_array(&self) -> [[T; 2]; 2] {
        self.p
    }

    /// `vec(P)` in column-major order: `(p11, p21, p12, p22)`.
    pub fn vec(&self) -> [T; 4] {
        [self.p[0][0], self.p[1][0], self.p[0][1], self.p[1][1]]
    }

    /// Both regimes can be left: `p11 < 1` and `p22 < 1`.
    pub fn is_irreducible(&self) -> bool {
        self.p[0][0] < T::one() && self.p[1][1] < T::one()
    }

    /// Same chain with the two regime labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p: [[self.p[1][1], self.p[1][0]], [self.p[0][1], self.p[0][0]]],
        }
    }

    /// One prediction step `P' xi`.
    pub fn predict(&self, xi: [T; 2]) -> [T; 2] {
        [
            self.p[0][0] * xi[0] + self.p[1][0] * xi[1],
            self.p[0][1] * xi[0] + self.p[1][1] * xi[1],
        ]
    }
}

/// A probability vector over the two regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateProbabilities<T: Scalar> {
    values: [T; 2],
}

impl<T: Scalar> StateProbabilities<T> {
    pub fn new(values: [T; 2]) -> Result<Self> {
        for &v in &values {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(Error::InvalidProbability(format!(
                    "state probability {v} outside [0, 1]"
                )));
            }
        }
        if (values[0] + values[1] - T::one()).abs() > sum_tolerance::<T>() {
            return Err(Error::InvalidProbability(format!(
                "state probabilities sum to {}",
                values[0] + values[1]
            )));
        }
        Ok(Self { values })
    }

    /// Unit vector `e_j` for the zero-based regime `j`.
    pub fn unit(regime: usize) -> Self {
        assert!(regime < 2, "two-regime model");
        let mut values = [T::zero(); 2];
        values[regime] = T::one();
        Self { values }
    }

    pub fn values(&self) -> [T; 2] {
        self.values
    }

    pub fn get(&self, regime: usize) -> T {
        self.values[regime]
    }

    pub fn swapped(&self) -> Self {
        Self {
            values: [self.values[1], self.values[0]],
        }
    }
}

impl<T: Scalar> Default for StateProbabilities<T> {
    fn default() -> Self {
        Self::unit(0)
    }
}

/// Stationary distribution of the chain:
/// `((1-p22)/(2-p11-p22), (1-p11)/(2-p11-p22))`.
pub fn unconditional_probs<T: Scalar>(trans: &TransitionMatrix<T>) -> Result<StateProbabilities<T>> {
    let denom = T::lit(2.0) - trans.p11() - trans.p22();
    if denom <= T::zero() {
        return Err(Error::Degenerate);
    }
    let pi1 = (T::one() - trans.p22()) / denom;
    let pi2 = (T::one() - trans.p11()) / denom;
    Ok(StateProbabilities { values: [pi1, pi2] })
}

/// Parameters of the two-regime model: loadings, diagonal idiosyncratic
/// variances and transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    /// `N x k` loadings of regime 1.
    pub b1: DMatrix<T>,
    /// `N x k` loadings of regime 2.
    pub b2: DMatrix<T>,
    pub sigma_e1: DVector<T>,
    pub sigma_e2: DVector<T>,
    pub trans: TransitionMatrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn n_len(&self) -> usize {
        self.b1.nrows()
    }

    pub fn k(&self) -> usize {
        self.b1.ncols()
    }

    pub fn loadings(&self, regime: usize) -> &DMatrix<T> {
        if regime == 0 {
            &self.b1
        } else {
            &self.b2
        }
    }

    pub fn variances(&self, regime: usize) -> &DVector<T> {
        if regime == 0 {
            &self.sigma_e1
        } else {
            &self.sigma_e2
        }
    }

    /// Checks shapes, finiteness and the variance floor.
    pub fn validate(&self, floor: T) -> Result<()> {
        let n = self.b1.nrows();
        let k = self.b1.ncols();
        if self.b2.shape() != (n, k) {
            return Err(Error::DimensionMismatch {
                what: "b2 rows",
                expected: n,
                actual: self.b2.nrows(),
            });
        }
        for (what, v) in [("sigma_e1", &self.sigma_e1), ("sigma_e2", &self.sigma_e2)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    actual: v.len(),
                });
            }
            if v.iter().any(|&s| !s.is_finite() || s < floor) {
                return Err(Error::InvalidConfig(format!("{what} has an entry below the variance floor")));
            }
        }
        if self.b1.iter().chain(self.b2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite loading".into()));
        }
        Ok(())
    }

    /// Exchanges the two regime labels.
    pub fn swapped(&self) -> Self {
        Self {
            b1: self.b2.clone(),
            b2: self.b1.clone(),
            sigma_e1: self.sigma_e2.clone(),
            sigma_e2: self.sigma_e1.clone(),
            trans: self.trans.swapped(),
        }
    }
}

/// Principal-component estimate of the linear representation
/// `x_t = A g_t + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpace<T: Scalar> {
    /// `N x k`, columns are `sqrt(N)` times unit eigenvectors.
    pub a_hat: DMatrix<T>,
    /// `T x k`, row `t` is `A' x_t / N`.
    pub g_hat: DMatrix<T>,
    /// Top `k` eigenvalues of the second-moment matrix, descending.
    pub eigvals: DVector<T>,
}

impl<T: Scalar> FactorSpace<T> {
    pub fn k(&self) -> usize {
        self.a_hat.ncols()
    }
}

/// Position of `(s_t = current, s_{t-1} = previous)` (zero-based) inside a
/// cross-probability row. Order: (1,1), (2,1), (1,2), (2,2).
#[inline]
pub const fn cross_index(current: usize, previous: usize) -> usize {
    current + 2 * previous
}

/// Output of one filter/smoother pass.
///
/// Row `t` of `cross` holds the joint posterior of `(s_t, s_{t-1})`; for the
/// first period the previous state is `s_0`, distributed as `initial`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityPath<T: Scalar> {
    pub predicted: Vec<[T; 2]>,
    pub filtered: Vec<[T; 2]>,
    pub smoothed: Vec<[T; 2]>,
    pub cross: Vec<[T; 4]>,
    pub loglik: T,
    pub initial: StateProbabilities<T>,
}

/// Largest violations of the probability-path invariants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizationError {
    pub predicted: f64,
    pub filtered: f64,
    pub smoothed: f64,
    pub cross: f64,
    pub marginal: f64,
    /// Entries outside `[0, 1]` (distance to the interval).
    pub range: f64,
}

impl NormalizationError {
    pub fn max(&self) -> f64 {
        [self.predicted, self.filtered, self.smoothed, self.cross, self.marginal, self.range]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> ProbabilityPath<T> {
    pub fn t_len(&self) -> usize {
        self.smoothed.len()
    }

    /// Time average of the smoothed probabilities.
    pub fn mean_smoothed(&self) -> [T; 2] {
        let t = T::from_usize_lossy(self.smoothed.len());
        let mut acc = [T::zero(); 2];
        for row in &self.smoothed {
            acc[0] += row[0];
            acc[1] += row[1];
        }
        [acc[0] / t, acc[1] / t]
    }

    /// Smoothed column `j` as a vector.
    pub fn smoothed_column(&self, regime: usize) -> DVector<T> {
        DVector::from_iterator(self.smoothed.len(), self.smoothed.iter().map(|r| r[regime]))
    }

    /// Measures row sums, the `[0,1]` range and the cross marginalization.
    pub fn normalization_error(&self) -> NormalizationError {
        fn row_dev<T: Scalar>(rows: &[[T; 2]]) -> f64 {
            rows.iter()
                .map(|r| (r[0] + r[1] - T::one()).abs().as_f64())
                .fold(0.0, f64::max)
        }
        let mut range = 0.0_f64;
        let all = self
            .predicted
            .iter()
            .chain(&self.filtered)
            .chain(&self.smoothed)
            .flat_map(|r| r.iter().copied())
            .chain(self.cross.iter().flat_map(|r| r.iter().copied()));
        for v in all {
            let v = v.as_f64();
            range = range.max(-v).max(v - 1.0);
        }
        let cross = self
            .cross
            .iter()
            .map(|r| (r[0] + r[1] + r[2] + r[3] - T::one()).abs().as_f64())
            .fold(0.0, f64::max);
        let mut marginal = 0.0_f64;
        for (t, row) in self.cross.iter().enumerate() {
            for j in 0..2 {
                let m = row[cross_index(j, 0)] + row[cross_index(j, 1)];
                marginal = marginal.max((m - self.smoothed[t][j]).abs().as_f64());
            }
            if t >= 1 {
                for i in 0..2 {
                    let m = row[cross_index(0, i)] + row[cross_index(1, i)];
                    marginal = marginal.max((m - self.smoothed[t - 1][i]).abs().as_f64());
                }
            }
        }
        NormalizationError {
            predicted: row_dev(&self.predicted),
            filtered: row_dev(&self.filtered),
            smoothed: row_dev(&self.smoothed),
            cross,
            marginal,
            range: range.max(0.0),
        }
    }

    /// Exchanges the regime labels in every stored probability.
    pub fn swapped(&self) -> Self {
        let sw2 = |r: &[T; 2]| [r[1], r[0]];
        Self {
            predicted: self.predicted.iter().map(sw2).collect(),
            filtered: self.filtered.iter().map(sw2).collect(),
            smoothed: self.smoothed.iter().map(sw2).collect(),
            // (1,1)<->(2,2), (2,1)<->(1,2)
            cross: self.cross.iter().map(|r| [r[3], r[2], r[1], r[0]]).collect(),
            loglik: self.loglik,
            initial: self.initial.swapped(),
        }
    }
}

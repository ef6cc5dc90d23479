//! EM estimation of regime-specific loadings, idiosyncratic variances and
//! the transition matrix, given principal-component factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{LogDensitySeries, filter_smooth, log_eta};
use crate::linalg::{right_solve_spd, sym_condition};
use crate::scalar::Scalar;
use crate::types::{
    FactorSpace, ModelParams, Panel, ProbabilityPath, StateProbabilities, TransitionMatrix, cross_index,
    unconditional_probs,
};

/// Weight sums below `EMPTY_REGIME_SHARE * T` mark a regime as empty.
const EMPTY_REGIME_SHARE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative tolerance on successive log-likelihoods.
    pub epsilon: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Distribution of the initial state `s_0`.
    pub xi0: [f64; 2],
    /// Weight squared residuals by the smoothed probabilities in the
    /// variance update. When false, the numerator sums over all periods.
    pub weighted_variance: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            epsilon: 1e-6,
            omega1: 0.2,
            omega2: 0.1,
            xi0: [1.0, 0.0],
            weighted_variance: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        let in_range = |w: f64| w > 0.0 && w < 0.5;
        if !(in_range(self.omega1) && in_range(self.omega2) && self.omega2 < self.omega1) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < omega2 < omega1 < 0.5, got omega1={}, omega2={}",
                self.omega1, self.omega2
            )));
        }
        self.initial_state::<f64>()?;
        Ok(())
    }

    pub fn initial_state<T: Scalar>(&self) -> Result<StateProbabilities<T>> {
        StateProbabilities::new([T::lit(self.xi0[0]), T::lit(self.xi0[1])])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult<T: Scalar> {
    pub params: ModelParams<T>,
    /// Final E-step at `params`; `path.initial` is the (relabeled) start.
    pub path: ProbabilityPath<T>,
    /// Observed log-likelihood at every parameter iterate, including the
    /// final one.
    pub loglik_trace: Vec<T>,
    /// Expected complete-data log-likelihood at the same iterates.
    pub q_trace: Vec<T>,
    /// Number of M-steps, the final one included.
    pub iterations: usize,
    pub converged: bool,
}

fn check_factor_rows<T: Scalar>(panel: &Panel<T>, g_hat: &DMatrix<T>) -> Result<()> {
    if g_hat.nrows() != panel.t_len() {
        return Err(Error::DimensionMismatch {
            what: "factor rows vs panel rows",
            expected: panel.t_len(),
            actual: g_hat.nrows(),
        });
    }
    Ok(())
}

fn check_weights<T: Scalar>(panel: &Panel<T>, smoothed: &[[T; 2]]) -> Result<()> {
    if smoothed.len() != panel.t_len() {
        return Err(Error::DimensionMismatch {
            what: "probability rows vs panel rows",
            expected: panel.t_len(),
            actual: smoothed.len(),
        });
    }
    Ok(())
}

/// Starting values: both loadings at `a_hat`, both variance vectors at the
/// diagonal of the residual second moment, and a transition matrix tilted
/// towards a persistent, more frequent regime 1.
pub fn init_params<T: Scalar>(panel: &Panel<T>, fs: &FactorSpace<T>, cfg: &EmConfig) -> Result<ModelParams<T>> {
    cfg.validate()?;
    check_factor_rows(panel, &fs.g_hat)?;
    if fs.a_hat.nrows() != panel.n_len() {
        return Err(Error::DimensionMismatch {
            what: "loading rows vs panel columns",
            expected: panel.n_len(),
            actual: fs.a_hat.nrows(),
        });
    }
    let resid = panel.data() - &fs.g_hat * fs.a_hat.transpose();
    let t = T::from_usize_lossy(panel.t_len());
    let floor = panel.variance_floor();
    let sigma = DVector::from_iterator(
        panel.n_len(),
        resid.column_iter().map(|c| (c.norm_squared() / t).max(floor)),
    );
    let half = T::lit(0.5);
    let (w1, w2) = (T::lit(cfg.omega1), T::lit(cfg.omega2));
    let trans = TransitionMatrix::new([[half + w1, half - w1], [half - w2, half + w2]])?;
    Ok(ModelParams {
        b1: fs.a_hat.clone(),
        b2: fs.a_hat.clone(),
        sigma_e1: sigma.clone(),
        sigma_e2: sigma,
        trans,
    })
}

/// Gram matrices above this condition number are treated as singular.
fn max_condition<T: Scalar>() -> f64 {
    1e-4 / T::default_epsilon().as_f64()
}

/// Weighted least squares of the panel on `g_hat` with weights from one
/// regime's smoothed probabilities.
pub fn weighted_loadings<T: Scalar>(panel: &Panel<T>, g_hat: &DMatrix<T>, weights: &[T], regime: usize) -> Result<DMatrix<T>> {
    let k = g_hat.ncols();
    let x = panel.data();
    let mut wg = g_hat.clone();
    for (t, mut row) in wg.row_iter_mut().enumerate() {
        row *= weights[t];
    }
    let gram = g_hat.transpose() * &wg;
    let gram = (&gram + gram.transpose()) * T::lit(0.5);
    let cross = x.transpose() * &wg;
    let condition = sym_condition(&gram);
    if !(condition <= max_condition::<T>()) {
        return Err(Error::SingularGram { regime, condition });
    }
    let b = right_solve_spd(&cross, &gram).ok_or(Error::SingularGram { regime, condition })?;
    debug_assert_eq!(b.ncols(), k);
    Ok(b)
}

/// `B_j = (sum_t xi_jt x_t g_t')(sum_t xi_jt g_t g_t')^{-1}` for both regimes.
pub fn m_step_loadings<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    smoothed: &[[T; 2]],
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_factor_rows(panel, g_hat)?;
    check_weights(panel, smoothed)?;
    let w1: Vec<T> = smoothed.iter().map(|r| r[0]).collect();
    let w2: Vec<T> = smoothed.iter().map(|r| r[1]).collect();
    Ok((
        weighted_loadings(panel, g_hat, &w1, 0)?,
        weighted_loadings(panel, g_hat, &w2, 1)?,
    ))
}

/// Probability-weighted mean squared residuals per series, floored at the
/// panel's variance floor.
pub fn m_step_variances<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    b: [&DMatrix<T>; 2],
    smoothed: &[[T; 2]],
) -> Result<(DVector<T>, DVector<T>)> {
    variances(panel, g_hat, b, smoothed, true)
}

/// Variant with an unweighted numerator: all squared residuals divided by
/// the regime's expected number of periods.
pub fn m_step_variances_unweighted<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    b: [&DMatrix<T>; 2],
    smoothed: &[[T; 2]],
) -> Result<(DVector<T>, DVector<T>)> {
    variances(panel, g_hat, b, smoothed, false)
}

fn variances<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    b: [&DMatrix<T>; 2],
    smoothed: &[[T; 2]],
    weighted: bool,
) -> Result<(DVector<T>, DVector<T>)> {
    check_factor_rows(panel, g_hat)?;
    check_weights(panel, smoothed)?;
    let x = panel.data();
    let (t_len, n) = x.shape();
    let floor = panel.variance_floor();
    let min_weight = T::lit(EMPTY_REGIME_SHARE) * T::from_usize_lossy(t_len);
    let mut out = [DVector::zeros(n), DVector::zeros(n)];
    for (j, sigma) in out.iter_mut().enumerate() {
        let total = smoothed.iter().fold(T::zero(), |a, r| a + r[j]);
        if !(total >= min_weight) {
            return Err(Error::EmptyRegime { regime: j });
        }
        let resid = x - g_hat * b[j].transpose();
        for i in 0..n {
            let mut ss = T::zero();
            for t in 0..t_len {
                let r = resid[(t, i)];
                let w = if weighted { smoothed[t][j] } else { T::one() };
                ss += w * r * r;
            }
            sigma[i] = (ss / total).max(floor);
        }
    }
    let [s1, s2] = out;
    Ok((s1, s2))
}

/// `p_ij = sum_t P(s_t=j, s_{t-1}=i | X) / sum_t P(s_{t-1}=i | X)`, where the
/// first row of `cross` pairs `s_1` with `s_0`.
pub fn m_step_transition<T: Scalar>(cross: &[[T; 4]]) -> Result<TransitionMatrix<T>> {
    let mut counts = [[T::zero(); 2]; 2];
    for row in cross {
        for (i, c) in counts.iter_mut().enumerate() {
            for (j, v) in c.iter_mut().enumerate() {
                *v += row[cross_index(j, i)];
            }
        }
    }
    let mut p = [[T::zero(); 2]; 2];
    for i in 0..2 {
        let den = counts[i][0] + counts[i][1];
        if !(den > T::zero()) {
            return Err(Error::EmptyRegime { regime: i });
        }
        p[i] = [counts[i][0] / den, counts[i][1] / den];
    }
    TransitionMatrix::new(p)
}

/// Expected complete-data log-likelihood (up to the constant `log xi0`
/// term). Zero-weight terms contribute nothing even when the log is `-inf`.
pub fn expected_loglik<T: Scalar>(
    log_eta: &LogDensitySeries<T>,
    smoothed: &[[T; 2]],
    cross: &[[T; 4]],
    trans: &TransitionMatrix<T>,
) -> Result<T> {
    let t_len = log_eta.t_len();
    if smoothed.len() != t_len || cross.len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "probability rows vs density rows",
            expected: t_len,
            actual: smoothed.len().min(cross.len()),
        });
    }
    let mut q = T::zero();
    for (le, w) in log_eta.values.iter().zip(smoothed) {
        for j in 0..2 {
            if w[j] > T::zero() {
                q += w[j] * le[j];
            }
        }
    }
    for row in cross {
        for i in 0..2 {
            for j in 0..2 {
                let w = row[cross_index(j, i)];
                if w > T::zero() {
                    q += w * trans.get(i, j).ln();
                }
            }
        }
    }
    Ok(q)
}

/// Puts the regime with the larger unconditional probability first. When
/// the chain has no unique stationary distribution, the time-averaged
/// smoothed probabilities decide instead.
pub fn relabel_states<T: Scalar>(params: ModelParams<T>, path: ProbabilityPath<T>) -> (ModelParams<T>, ProbabilityPath<T>) {
    let swap = match unconditional_probs(&params.trans) {
        Ok(u) => u.get(0) < u.get(1),
        Err(_) => {
            let m = path.mean_smoothed();
            m[0] < m[1]
        }
    };
    if swap {
        (params.swapped(), path.swapped())
    } else {
        (params, path)
    }
}

/// One E-step: densities, filter, smoother, cross-probabilities and Q.
pub fn e_step<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    params: &ModelParams<T>,
    xi0: &StateProbabilities<T>,
) -> Result<(ProbabilityPath<T>, T)> {
    let le = log_eta(panel, g_hat, params)?;
    let path = filter_smooth(&le, &params.trans, xi0)?;
    let q = expected_loglik(&le, &path.smoothed, &path.cross, &params.trans)?;
    Ok((path, q))
}

/// One M-step given an E-step path.
pub fn m_step<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    path: &ProbabilityPath<T>,
    cfg: &EmConfig,
) -> Result<ModelParams<T>> {
    let (b1, b2) = m_step_loadings(panel, g_hat, &path.smoothed)?;
    let (sigma_e1, sigma_e2) = variances(panel, g_hat, [&b1, &b2], &path.smoothed, cfg.weighted_variance)?;
    let trans = m_step_transition(&path.cross)?;
    Ok(ModelParams {
        b1,
        b2,
        sigma_e1,
        sigma_e2,
        trans,
    })
}

fn relative_change<T: Scalar>(current: T, previous: T) -> f64 {
    let (a, b) = (current.as_f64(), previous.as_f64());
    let num = (a - b).abs();
    if num == 0.0 {
        return 0.0;
    }
    num / (0.5 * (a + b).abs())
}

/// EM from the standard starting values.
pub fn run_em<T: Scalar>(panel: &Panel<T>, fs: &FactorSpace<T>, cfg: &EmConfig) -> Result<EmResult<T>> {
    let init = init_params(panel, fs, cfg)?;
    run_em_from(panel, &fs.g_hat, init, cfg.initial_state()?, cfg)
}

/// EM from given starting parameters and initial-state distribution.
///
/// Stops after the first E-step whose log-likelihood is within the relative
/// tolerance of the previous one (or after `max_iter` M-steps), then takes
/// one more M-step and a final E-step. Labels are re-sorted after every
/// M-step.
///
/// The symmetric start (equal loadings and variances) is an unstable fixed
/// point: the first few increments are tiny but growing. The tolerance test
/// is therefore only accepted once the increments have stopped growing.
pub fn run_em_from<T: Scalar>(
    panel: &Panel<T>,
    g_hat: &DMatrix<T>,
    init: ModelParams<T>,
    xi0: StateProbabilities<T>,
    cfg: &EmConfig,
) -> Result<EmResult<T>> {
    cfg.validate()?;
    check_factor_rows(panel, g_hat)?;
    init.validate(T::zero())?;
    let mut params = init;
    let mut xi0 = xi0;
    let mut loglik_trace = Vec::new();
    let mut q_trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (path, q) = e_step(panel, g_hat, &params, &xi0)?;
        let ll = path.loglik;
        let converged = match loglik_trace[..] {
            [.., before, prev] => {
                relative_change(ll, prev) < cfg.epsilon && (ll - prev).abs() <= (prev - before).abs()
            }
            _ => false,
        };
        loglik_trace.push(ll);
        q_trace.push(q);

        let next = m_step(panel, g_hat, &path, cfg)?;
        iterations += 1;
        let (next, path) = relabel_states(next, path);
        params = next;
        xi0 = path.initial;

        if converged || iterations >= cfg.max_iter {
            let (path, q) = e_step(panel, g_hat, &params, &xi0)?;
            loglik_trace.push(path.loglik);
            q_trace.push(q);
            return Ok(EmResult {
                params,
                path,
                loglik_trace,
                q_trace,
                iterations,
                converged,
            });
        }
    }
}

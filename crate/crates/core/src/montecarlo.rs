//! Monte Carlo driver: simulate, estimate and score independent
//! replications, then aggregate them into a table row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, run_em};
use crate::error::Result;
use crate::metrics::{MetricsReport, evaluate};
use crate::pca::estimate_factor_space;
use crate::rng::RngHandle;
use crate::simulate::{SimConfig, simulate_panel};

/// Per-step slack allowed when checking that the log-likelihood trace
/// never decreases.
pub const MONOTONICITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub metrics: MetricsReport,
    /// Steps where the log-likelihood fell by more than the slack.
    pub monotonicity_violations: usize,
    /// Largest one-step fall of the log-likelihood (0 if none).
    pub max_loglik_drop: f64,
    pub max_normalization_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub replication: usize,
    pub error: String,
}

/// Mean and sample standard deviation; `sd` is absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub mean: f64,
    pub sd: Option<f64>,
}

impl ColumnStat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Some(Self { mean, sd })
    }
}

/// Column layout of the simulation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub p11: ColumnStat,
    pub p22: ColumnStat,
    pub xi1_bar: ColumnStat,
    pub xi2_bar: ColumnStat,
    #[serde(rename = "R2_Bstar")]
    pub r2_bstar: ColumnStat,
    #[serde(rename = "MSE_chi")]
    pub mse_chi: ColumnStat,
    pub avg_iter: ColumnStat,
}

pub const TABLE_COLUMNS: [&str; 7] = ["p11", "p22", "xi1_bar", "xi2_bar", "R2_Bstar", "MSE_chi", "avg_iter"];

impl TableRow {
    pub fn from_metrics(rows: &[&MetricsReport]) -> Option<Self> {
        let col = |f: fn(&MetricsReport) -> f64| {
            let v: Vec<f64> = rows.iter().map(|m| f(m)).collect();
            ColumnStat::from_values(&v)
        };
        Some(Self {
            p11: col(|m| m.p11)?,
            p22: col(|m| m.p22)?,
            xi1_bar: col(|m| m.xi1_bar)?,
            xi2_bar: col(|m| m.xi2_bar)?,
            r2_bstar: col(|m| m.r2_bstar)?,
            mse_chi: col(|m| m.mse_chi)?,
            avg_iter: col(|m| m.iterations as f64)?,
        })
    }

    pub fn columns(&self) -> [ColumnStat; 7] {
        [
            self.p11,
            self.p22,
            self.xi1_bar,
            self.xi2_bar,
            self.r2_bstar,
            self.mse_chi,
            self.avg_iter,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub sim: SimConfig,
    pub em: EmConfig,
    pub seed: u64,
    pub replications: usize,
    pub succeeded: usize,
    pub non_converged: usize,
    pub monotonicity_violations: usize,
    pub max_normalization_error: f64,
    /// Absent when every replication failed.
    pub table: Option<TableRow>,
    pub failures: Vec<FailedReplication>,
    pub outcomes: Vec<ReplicationOutcome>,
}

impl MonteCarloReport {
    /// Two-line CSV body (`mean`, `sd`) under the table column names.
    pub fn table_csv(&self) -> String {
        let mut out = format!("statistic,{}\n", TABLE_COLUMNS.join(","));
        if let Some(row) = &self.table {
            let cols = row.columns();
            let mean: Vec<String> = cols.iter().map(|c| format!("{:.16e}", c.mean)).collect();
            let sd: Vec<String> = cols
                .iter()
                .map(|c| c.sd.map(|v| format!("{v:.16e}")).unwrap_or_default())
                .collect();
            out.push_str(&format!("mean,{}\nsd,{}\n", mean.join(","), sd.join(",")));
        }
        out
    }
}

/// One replication on stream `replication` of `seed`, estimating `2r`
/// factors.
pub fn run_replication(sim: &SimConfig, em: &EmConfig, seed: u64, replication: usize) -> Result<ReplicationOutcome> {
    let truth = simulate_panel::<f64>(sim, RngHandle::new(seed, replication as u64))?;
    let fs = estimate_factor_space(&truth.panel, 2 * sim.r)?;
    let result = run_em(&truth.panel, &fs, em)?;
    let metrics = evaluate(&truth, &fs, &result)?;
    let drops: Vec<f64> = result.loglik_trace.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(ReplicationOutcome {
        replication,
        metrics,
        monotonicity_violations: drops.iter().filter(|&&d| d > MONOTONICITY_SLACK).count(),
        max_loglik_drop: drops.iter().copied().fold(0.0, f64::max),
        max_normalization_error: result.path.normalization_error().max(),
    })
}

/// Runs `replications` independent replications. Each uses its own random
/// stream, so serial and parallel runs give identical reports.
pub fn run_montecarlo(sim: &SimConfig, em: &EmConfig, seed: u64, replications: usize, parallel: bool) -> Result<MonteCarloReport> {
    sim.validate()?;
    em.validate()?;
    let run = |rep: usize| run_replication(sim, em, seed, rep);
    let results: Vec<Result<ReplicationOutcome>> = if parallel {
        (0..replications).into_par_iter().map(run).collect()
    } else {
        (0..replications).map(run).collect()
    };
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (replication, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(FailedReplication {
                replication,
                error: e.to_string(),
            }),
        }
    }
    let metrics: Vec<&MetricsReport> = outcomes.iter().map(|o| &o.metrics).collect();
    Ok(MonteCarloReport {
        sim: sim.clone(),
        em: em.clone(),
        seed,
        replications,
        succeeded: outcomes.len(),
        non_converged: metrics.iter().filter(|m| !m.converged).count(),
        monotonicity_violations: outcomes.iter().map(|o| o.monotonicity_violations).sum(),
        max_normalization_error: outcomes.iter().map(|o| o.max_normalization_error).fold(0.0, f64::max),
        table: TableRow::from_metrics(&metrics),
        failures,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_stats() {
        let s = ColumnStat::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, Some(1.0));
        assert_eq!(ColumnStat::from_values(&[4.0]).unwrap().sd, None);
        assert!(ColumnStat::from_values(&[]).is_none());
    }

    #[test]
    fn single_replication_has_no_spread() {
        let sim = SimConfig::baseline(20, 120, 1);
        let rep = run_montecarlo(&sim, &EmConfig::default(), 3, 1, false).unwrap();
        assert_eq!(rep.succeeded + rep.failures.len(), 1);
        if let Some(t) = &rep.table {
            assert!(t.columns().iter().all(|c| c.sd.is_none()));
        }
        assert!(rep.table_csv().starts_with("statistic,p11,p22,xi1_bar,xi2_bar,R2_Bstar,MSE_chi,avg_iter\n"));
    }

    #[test]
    fn serial_and_parallel_agree() {
        let sim = SimConfig::baseline(20, 120, 1);
        let em = EmConfig::default();
        let a = run_montecarlo(&sim, &em, 11, 5, false).unwrap();
        let b = run_montecarlo(&sim, &em, 11, 5, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table_csv(), b.table_csv());
    }
}

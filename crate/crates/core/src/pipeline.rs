//! End-to-end runs behind the command-line modes.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::em::{EmConfig, run_em};
use crate::error::{Error, Result};
use crate::io::{
    EstimateReport, KSpec, Mode, PanelFile, RunConfig, TruthRecord, read_panel_csv, write_json, write_panel_csv,
    write_series_csv,
};
use crate::montecarlo::{MonteCarloReport, run_montecarlo};
use crate::oracle::{VerifyReport, verify_suite};
use crate::pca::{demean_panel, estimate_factor_space, select_num_factors_er};
use crate::rng::RngHandle;
use crate::simulate::{SimTruth, simulate_panel};
use crate::types::Panel;

/// Fitted model plus what is needed to write its outputs.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub report: EstimateReport,
    pub g_hat: DMatrix<f64>,
}

/// Principal components then EM on an in-memory panel. With `KSpec::Auto`
/// the factor count is the eigenvalue-ratio choice, with `k_max` capped
/// at `min(N, T) - 1`.
pub fn estimate_panel(panel: &Panel<f64>, k: KSpec, k_max: usize, demean: bool, em: &EmConfig) -> Result<Estimate> {
    em.validate()?;
    let centred;
    let panel = if demean {
        centred = demean_panel(panel);
        &centred
    } else {
        panel
    };
    let auto = k == KSpec::Auto;
    let k = match k {
        KSpec::Fixed(k) => k,
        KSpec::Auto => {
            let cap = panel.t_len().min(panel.n_len()) - 1;
            select_num_factors_er(panel, k_max.min(cap))?
        }
    };
    let fs = estimate_factor_space(panel, k)?;
    let result = run_em(panel, &fs, em)?;
    Ok(Estimate {
        report: EstimateReport::new(&fs, &result, demean, auto),
        g_hat: fs.g_hat,
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg
        .output_path
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("an output directory is required".into()))?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

/// Simulates one panel on stream 0 and writes `panel.csv` and `truth.json`.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimTruth<f64>> {
    cfg.validate_for(Mode::Simulate)?;
    let sim = cfg.sim.as_ref().expect("checked by validate_for");
    let truth = simulate_panel::<f64>(sim, RngHandle::new(cfg.effective_seed(), 0))?;
    let dir = out_dir(cfg)?;
    write_panel_csv(dir.join("panel.csv"), &truth.panel, None, None)?;
    write_json(dir.join("truth.json"), &TruthRecord::new(sim, &truth))?;
    Ok(truth)
}

/// Reads `input_path`, estimates, and writes `results.json` and `series.csv`.
pub fn run_estimate(cfg: &RunConfig) -> Result<Estimate> {
    cfg.validate_for(Mode::Estimate)?;
    let PanelFile { panel, dates, .. } = read_panel_csv(cfg.input_path.as_ref().expect("checked by validate_for"))?;
    let est = estimate_panel(&panel, cfg.k, cfg.k_max, cfg.demean, &cfg.em)?;
    let dir = out_dir(cfg)?;
    write_json(dir.join("results.json"), &est.report)?;
    write_series_csv(dir.join("series.csv"), &est.g_hat, &est.report.smoothed, dates.as_deref())?;
    Ok(est)
}

/// Runs the replications and writes `report.json` and `table.csv`.
pub fn run_montecarlo_mode(cfg: &RunConfig) -> Result<MonteCarloReport> {
    cfg.validate_for(Mode::Montecarlo)?;
    let sim = cfg.sim.as_ref().expect("checked by validate_for");
    let report = run_montecarlo(sim, &cfg.em, cfg.effective_seed(), cfg.replications, cfg.parallel)?;
    let dir = out_dir(cfg)?;
    write_json(dir.join("report.json"), &report)?;
    fs::write(dir.join("table.csv"), report.table_csv())?;
    Ok(report)
}

/// Checks the recursions against enumeration; writes `verify.json` when an
/// output directory is set.
pub fn run_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    cfg.validate_for(Mode::Verify)?;
    let report = verify_suite(cfg.verify_instances, RngHandle::new(cfg.effective_seed(), 0))?;
    if cfg.output_path.is_some() {
        write_json(out_dir(cfg)?.join("verify.json"), &report)?;
    }
    Ok(report)
}

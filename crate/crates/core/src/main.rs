use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msfactor::io::{KSpec, Mode, RunConfig};
use msfactor::montecarlo::TABLE_COLUMNS;
use msfactor::pipeline::{run_estimate, run_montecarlo_mode, run_simulate, run_verify};
use msfactor::simulate::SimConfig;

/// Largest recursion/enumeration deviation `verify` accepts.
const VERIFY_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "msfactor", version, about = "Markov switching factor models: simulate, estimate, Monte Carlo, verify")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one panel and write panel.csv and truth.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Fit the model to a CSV panel and write results.json and series.csv.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Panel CSV (header row of series names, optional date column).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of factors, or "auto" for the eigenvalue-ratio choice.
        #[arg(long)]
        k: Option<KSpec>,
        #[arg(long)]
        k_max: Option<usize>,
        /// Subtract column means before extracting factors.
        #[arg(long)]
        demean: bool,
    },
    /// Run Monte Carlo replications and write report.json and table.csv.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        reps: Option<usize>,
        /// Run replications on one thread.
        #[arg(long)]
        serial: bool,
    },
    /// Check the filter and smoother against exhaustive enumeration.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    omega1: Option<f64>,
    #[arg(long)]
    omega2: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
}

impl Common {
    fn apply(self, cfg: &mut RunConfig) {
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.out.is_some() {
            cfg.output_path = self.out;
        }
        let em = &mut cfg.em;
        if let Some(v) = self.max_iter {
            em.max_iter = v;
        }
        if let Some(v) = self.epsilon {
            em.epsilon = v;
        }
        if let Some(v) = self.omega1 {
            em.omega1 = v;
        }
        if let Some(v) = self.omega2 {
            em.omega2 = v;
        }
    }
}

impl SimArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let sim = cfg.sim.get_or_insert_with(|| SimConfig::baseline(100, 500, 1));
        if let Some(v) = self.n {
            sim.n = v;
        }
        if let Some(v) = self.t {
            sim.t = v;
        }
        if let Some(v) = self.r {
            sim.r = v;
        }
    }
}

fn run(cli: Cli) -> msfactor::Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    let default_out = |cfg: &mut RunConfig| {
        cfg.output_path.get_or_insert_with(|| PathBuf::from("msfactor-out"));
    };
    let mode = match cli.command {
        Command::Simulate { common, sim } => {
            common.apply(&mut cfg);
            sim.apply(&mut cfg);
            default_out(&mut cfg);
            Mode::Simulate
        }
        Command::Estimate {
            common,
            input,
            k,
            k_max,
            demean,
        } => {
            common.apply(&mut cfg);
            if input.is_some() {
                cfg.input_path = input;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(v) = k_max {
                cfg.k_max = v;
            }
            cfg.demean |= demean;
            default_out(&mut cfg);
            Mode::Estimate
        }
        Command::Montecarlo {
            common,
            sim,
            reps,
            serial,
        } => {
            common.apply(&mut cfg);
            sim.apply(&mut cfg);
            if let Some(v) = reps {
                cfg.replications = v;
            }
            if serial {
                cfg.parallel = false;
            }
            default_out(&mut cfg);
            Mode::Montecarlo
        }
        Command::Verify { common, instances } => {
            common.apply(&mut cfg);
            if let Some(v) = instances {
                cfg.verify_instances = v;
            }
            Mode::Verify
        }
    };
    if let Some(m) = cfg.mode.filter(|&m| m != mode) {
        eprintln!("note: config mode {m:?} overridden by the {mode:?} subcommand");
    }
    let out = cfg.output_path.clone().unwrap_or_default();

    match mode {
        Mode::Simulate => {
            let truth = run_simulate(&cfg)?;
            println!(
                "simulated T={} N={} (noise-to-signal {:.3}) -> {}",
                truth.panel.t_len(),
                truth.panel.n_len(),
                truth.noise_to_signal(),
                out.display()
            );
        }
        Mode::Estimate => {
            let est = run_estimate(&cfg)?;
            let r = &est.report;
            let p = &r.params.trans;
            println!("T={} N={} k={}{}", r.t, r.n, r.k, if r.k_selected_automatically { " (auto)" } else { "" });
            println!("p11={:.4} p22={:.4}", p[0][0], p[1][1]);
            println!("mean smoothed xi1={:.4} xi2={:.4}", r.unconditional[0], r.unconditional[1]);
            println!("loglik={:.6} iterations={} converged={}", r.loglik, r.iterations, r.converged);
            println!("-> {}", out.display());
        }
        Mode::Montecarlo => {
            let rep = run_montecarlo_mode(&cfg)?;
            println!(
                "replications={} succeeded={} non-converged={} failed={}",
                rep.replications,
                rep.succeeded,
                rep.non_converged,
                rep.failures.len()
            );
            if let Some(table) = &rep.table {
                println!("{:>10} {:>10} {:>10}", "", "mean", "sd");
                for (name, c) in TABLE_COLUMNS.iter().zip(table.columns()) {
                    let sd = c.sd.map_or("-".to_owned(), |v| format!("{v:.4}"));
                    println!("{name:>10} {:>10.4} {sd:>10}", c.mean);
                }
            }
            println!("-> {}", out.display());
        }
        Mode::Verify => {
            let rep = run_verify(&cfg)?;
            println!("instances={}", rep.instances);
            println!("loglik     {:.3e}", rep.max_loglik_dev);
            println!("smoothed   {:.3e}", rep.max_smoothed_dev);
            println!("cross      {:.3e}", rep.max_cross_dev);
            println!("expected   {:.3e}", rep.max_expected_loglik_dev);
            let ok = rep.max() < VERIFY_TOL;
            println!("{} (tolerance {VERIFY_TOL:e})", if ok { "PASS" } else { "FAIL" });
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command-line front end: `fedrot run`, `fedrot sweep` and `fedrot verify`.
//!
//! Exit status: 0 on success, 1 when `verify` fails or an output cannot be
//! written, 2 for usage and config errors, 3 when a run diverges (or every
//! sweep cell fails).

pub mod config;
pub mod output;
pub mod verify;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

/// Environment variable capping the worker thread count when `--jobs` is
/// not given.
pub const THREADS_ENV: &str = "FEDROT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fedrot",
    version,
    about = "Federated LoRA simulator with rotation-aligned aggregation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write rounds.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run every cell of the config's [sweep] grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the built-in invariant checks.
    Verify,
}

fn thread_count(jobs: Option<usize>, env: Option<String>) -> Result<Option<usize>, String> {
    let n = match (jobs, env) {
        (Some(j), _) => j,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?,
        (None, None) => return Ok(None),
    };
    if n == 0 {
        return Err("thread count must be at least 1".into());
    }
    Ok(Some(n))
}

fn configure_threads(jobs: Option<usize>) -> Result<(), String> {
    if let Some(n) = thread_count(jobs, std::env::var(THREADS_ENV).ok())? {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
    Ok(())
}

fn usage(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn prepare_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))
}

fn resolve_out(cli: Option<PathBuf>, file: &config::ExperimentFile) -> Result<PathBuf, String> {
    cli.or_else(|| file.output.as_ref().map(|o| o.dir.clone()))
        .ok_or_else(|| "no output directory: pass --out or set [output] dir".to_string())
}

pub fn cmd_run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>, jobs: Option<usize>) -> u8 {
    let mut file = match config::load(config_path) {
        Ok(f) => f,
        Err(e) => return usage(e),
    };
    if let Some(s) = seed {
        file.federation.seed = s;
    }
    let dir = match resolve_out(out, &file).and_then(|d| prepare_dir(&d).map(|_| d)) {
        Ok(d) => d,
        Err(e) => return usage(e),
    };
    if let Err(e) = configure_threads(jobs) {
        return usage(e);
    }
    let run = match fedrot::run_federation(&file.federation) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    if let Err(e) = output::write_run(&dir, &run) {
        eprintln!("error: writing results to {}: {e}", dir.display());
        return EXIT_FAILURE;
    }
    match &run.failure {
        None => {
            info!("wrote {} rounds to {}", run.rounds.len(), dir.display());
            EXIT_OK
        }
        Some(e) => {
            eprintln!(
                "error: {e}; partial results ({} rounds) in {}",
                run.rounds.len(),
                dir.display()
            );
            EXIT_DIVERGED
        }
    }
}

pub fn cmd_sweep(config_path: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> u8 {
    let file = match config::load(config_path) {
        Ok(f) => f,
        Err(e) => return usage(e),
    };
    let Some(grid) = file.sweep.clone() else {
        return usage("config has no [sweep] section");
    };
    let dir = match resolve_out(out, &file) {
        Ok(d) => d,
        Err(e) => return usage(e),
    };
    let cells = match grid.expand(&file.federation) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let mut labels = HashSet::new();
    for (params, seed, _) in &cells {
        let mut label: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        label.push(format!("seed={seed}"));
        let label = label.join("_");
        if !labels.insert(label.clone()) {
            return usage(format!("sweep grid produces duplicate cell {label}"));
        }
        if let Err(e) = prepare_dir(&dir.join(&label)) {
            return usage(e);
        }
    }
    if let Err(e) = configure_threads(jobs) {
        return usage(e);
    }
    let results = match fedrot::run_sweep(&file.federation, &grid) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    let mut ok = 0;
    for cell in &results {
        match &cell.result {
            Ok(run) => {
                if let Err(e) = output::write_run(&dir.join(cell.label()), run) {
                    eprintln!("error: writing cell {}: {e}", cell.label());
                    return EXIT_FAILURE;
                }
                if run.is_complete() {
                    ok += 1;
                } else {
                    warn!("cell {} diverged", cell.label());
                }
            }
            Err(e) => error!("cell {} is invalid: {e}", cell.label()),
        }
    }
    if let Err(e) = output::write_sweep_csv(&dir.join("sweep.csv"), &results) {
        eprintln!("error: writing sweep.csv: {e}");
        return EXIT_FAILURE;
    }
    info!("{ok}/{} cells completed", results.len());
    if ok == 0 {
        eprintln!("error: every sweep cell failed; see sweep.csv");
        EXIT_DIVERGED
    } else {
        EXIT_OK
    }
}

pub fn cmd_verify(procrustes: verify::ProcrustesFn) -> u8 {
    let mut stdout = std::io::stdout().lock();
    match verify::run_verify(procrustes, &mut stdout) {
        Ok(true) => EXIT_OK,
        Ok(false) | Err(_) => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => cmd_run(&config, out, seed, jobs),
        Command::Sweep { config, out, jobs } => cmd_sweep(&config, out, jobs),
        Command::Verify => cmd_verify(verify::library_procrustes),
    }
}

pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(Cli::parse()))
}

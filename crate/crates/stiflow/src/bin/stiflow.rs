use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use stiflow::error::{CliError, Result};
use stiflow::experiment::{run_phantom, run_reconstruct, run_simulate};
use stiflow::io::write_json;
use stiflow::verify::{run_suite, Suite};
use stiflow::ExperimentConfig;

#[derive(Parser)]
#[command(name = "stiflow", version, about = "Joint motion and image reconstruction from sparse time-resolved tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the ground-truth template, velocity and frames.
    Phantom,
    /// Write ground truth plus synthetic sinograms.
    Simulate,
    /// Reconstruct template and motion from simulated or stored data.
    Reconstruct,
    /// Run a property battery and write report.json.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Print the resolved configuration and its digest.
    Info,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.output.dir.as_path();
    match &cli.command {
        Command::Phantom => {
            create_dir(out)?;
            run_phantom(cfg, out)
        }
        Command::Simulate => {
            create_dir(out)?;
            run_simulate(cfg, out)
        }
        Command::Reconstruct => {
            create_dir(out)?;
            let m = run_reconstruct(cfg, out)?;
            println!("status {} after {} iterations", m.status, m.iterations);
            println!("objective {:.6e} (initial {:.6e})", m.objective.value, m.initial_objective);
            if let Some(errs) = &m.frame_errors {
                let s: Vec<String> = errs.iter().map(|e| format!("{e:.4}")).collect();
                println!("frame errors {}", s.join(" "));
            }
            Ok(())
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite)?;
            print!("{}", report.text());
            create_dir(out)?;
            write_json(&out.join("report.json"), &report)?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Verification(format!(
                    "{} of {} checks failed",
                    report.failures(),
                    report.checks.len()
                )))
            }
        }
        Command::Info => {
            cfg.validate()?;
            println!("stiflow {}", env!("CARGO_PKG_VERSION"));
            println!("config sha256 {}", cfg.digest());
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(s) = std::env::var("STIFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = s
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("STIFLOW_THREADS must be a positive integer, got `{s}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = init_threads().and_then(|_| load(&cli));
    let out = cfg
        .as_ref()
        .map(|c| c.output.dir.clone())
        .unwrap_or_else(|_| cli.out.clone().unwrap_or_else(|| "out".into()));
    match cfg.and_then(|c| run(&cli, &c)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let report = ErrorReport {
                kind: e.kind(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
            if std::fs::create_dir_all(&out).is_ok() {
                let _ = write_json(&out.join("error.json"), &report);
            }
            if let Ok(s) = serde_json::to_string(&report) {
                eprintln!("{s}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

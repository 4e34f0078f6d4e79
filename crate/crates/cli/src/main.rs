use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use torwalk::config::{Experiment, ExperimentConfig, RawConfig};
use torwalk::{preset, run, CliError};

/// Runs one torus random-walk experiment and writes its artifacts.
#[derive(Parser, Debug)]
#[command(name = "torwalk", version)]
struct Args {
    /// equidistribute, lyapunov, fourier-scan, dioph-verify, flatten, specgap or algebra-info
    experiment: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to TORWALK_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
}

fn resolve(args: &Args) -> Result<ExperimentConfig, CliError> {
    let experiment: Experiment = args.experiment.parse()?;
    let mut raw = RawConfig::default();
    if let Some(name) = &args.preset {
        let mut p = preset(name)?.config;
        if p.experiment != experiment {
            p.params.clear();
        }
        p.experiment = experiment;
        raw = p.to_raw();
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file = RawConfig::parse(&text)?;
        if let Some(e) = file.top.get("experiment") {
            if e != experiment.as_str() {
                return Err(CliError::Config(format!(
                    "config experiment {e:?} conflicts with command {experiment}"
                )));
            }
        }
        raw = raw.overlay(file);
    }
    raw.top.insert("experiment".into(), experiment.to_string());
    if let Some(seed) = args.seed {
        raw.top.insert("seed".into(), seed.to_string());
    }
    raw.top.entry("seed".into()).or_insert_with(|| "1".into());
    raw.top
        .entry("output_dir".into())
        .or_insert_with(|| format!("torwalk-out/{experiment}"));
    ExperimentConfig::from_raw(raw)
}

fn threads(args: &Args) -> Result<Option<usize>, CliError> {
    if let Some(t) = args.threads {
        return Ok(Some(t));
    }
    match std::env::var("TORWALK_THREADS") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("TORWALK_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn main_inner(args: &Args) -> Result<(), CliError> {
    if let Some(t) = threads(args)? {
        if t == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = resolve(args)?;
    let summary = run(&cfg)?;
    println!("{}: wrote {} artifacts to {}", cfg.experiment, summary.artifacts.len() + 1, summary.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

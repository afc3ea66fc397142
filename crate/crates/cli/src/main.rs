//! `paracoupler`: runs named simulation scenarios from TOML configurations.

mod config;
mod error;
mod output;
mod scenarios;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::output::{sha256_hex, to_json, write_atomic, OutputDir, RunManifest};

const THREADS_ENV: &str = "PARACOUPLER_THREADS";

#[derive(Parser)]
#[command(name = "paracoupler", version, about = "Parametric coupler scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its data files plus manifest.json.
    Run {
        config: PathBuf,
        /// Overrides the config seed (default 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory (default out/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to PARACOUPLER_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check schema and physical ranges without running.
    Validate { config: PathBuf },
    /// List scenarios, their parameters and the figure each reproduces.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out, threads } => run(&config, seed, out, threads),
        Command::Validate { config } => validate(&config),
        Command::List => {
            print!("{}", scenarios::listing());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Schema(lines) => lines.iter().for_each(|l| eprintln!("error: {l}")),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

fn load(path: &Path) -> Result<(Vec<u8>, config::ScenarioConfig, config::Diagnostics), CliError> {
    let bytes = config::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::schema("config is not valid UTF-8"))?;
    let (cfg, diag) = config::parse(text)?;
    Ok((bytes, cfg, diag))
}

fn validate(path: &Path) -> Result<(), CliError> {
    let (_, _, diag) = load(path)?;
    for w in &diag.warnings {
        println!("warning: {w}");
    }
    if !diag.errors.is_empty() {
        return Err(CliError::Schema(diag.errors));
    }
    println!("ok");
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::schema(format!("{THREADS_ENV}: expected a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), CliError> {
    let (bytes, cfg, diag) = load(path)?;
    for w in &diag.warnings {
        eprintln!("warning: {w}");
    }
    if !diag.errors.is_empty() {
        return Err(CliError::Schema(diag.errors));
    }
    if let Some(n) = thread_count(threads)? {
        if n == 0 {
            return Err(CliError::schema("--threads: must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| Path::new("out").join(cfg.scenario.name()));
    let mut outputs = OutputDir::create(&dir)?;

    let start = Instant::now();
    let report = scenarios::run(&cfg, seed, &mut outputs)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut warnings = diag.warnings;
    warnings.extend(report.warnings);
    let manifest = RunManifest {
        scenario: cfg.scenario.name().to_string(),
        config_hash: sha256_hex(&bytes),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        files: outputs.files.clone(),
        warnings,
        numerical_flags: report.flags,
    };
    let manifest_path = outputs.path().join("manifest.json");
    write_atomic(&manifest_path, &to_json(&manifest)?).map_err(|e| CliError::Io(format!("cannot write {}: {e}", manifest_path.display())))?;

    for f in &manifest.files {
        println!("{}  {}", f.sha256, outputs.path().join(&f.name).display());
    }
    println!("manifest: {}", manifest_path.display());
    if !manifest.numerical_flags.is_empty() {
        return Err(CliError::Numerical(manifest.numerical_flags.join("; ")));
    }
    Ok(())
}

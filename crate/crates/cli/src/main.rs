use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use waveobs::experiments::{default_config, exit_code, parse_config, run, ExperimentConfig, RunOutput, Subcommand};
use waveobs::{Error, Result};

#[derive(Parser)]
#[command(name = "waveobs", version, about = "Boundary observability and control experiments for coupled wave systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Observability constants over levels x windows x mode counts.
    Observe(Common),
    /// HUM control of a random target with a forward-solve check.
    Control(Common),
    /// Trace ellipticity ratio of the time derivative across refinements.
    Ellipticity(Common),
    /// Regularity-shift table for the inner and enlarged windows.
    ShiftTable(Common),
    /// Adjoint, shift, conservation, duality and symbol checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `<subcommand>.csv`; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; rayon's default when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfiguration(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => default_config(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_csv(dir: &Path, cmd: Subcommand, out: &RunOutput) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", cmd.name()));
    fs::write(&path, &out.csv)?;
    Ok(path)
}

fn execute(cmd: Subcommand, common: &Common) -> Result<RunOutput> {
    let cfg = load(common)?;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::InvalidConfiguration("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    let out = pool.install(|| run(cmd, &cfg))?;
    let path = write_csv(&dir, cmd, &out)?;
    eprintln!("config {} -> {}", cfg.hash()?, path.display());
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match &cli.command {
        Command::Observe(c) => (Subcommand::Observe, c),
        Command::Control(c) => (Subcommand::Control, c),
        Command::Ellipticity(c) => (Subcommand::Ellipticity, c),
        Command::ShiftTable(c) => (Subcommand::ShiftTable, c),
        Command::Verify(c) => (Subcommand::Verify, c),
    };
    let result = execute(cmd, common);
    match &result {
        Ok(out) => out.summary.iter().for_each(|line| eprintln!("{line}")),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}

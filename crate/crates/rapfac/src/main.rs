use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rapfac::compare::{compare, load};
use rapfac::presets::preset;
use rapfac::{execute_and_write, AppError, Overrides, RunConfig, Verb};

#[derive(Parser)]
#[command(name = "rapfac", version, about = "Rydberg facilitation by rapid adiabatic passage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides outputs.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for all random streams (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Integrator step in μs (overrides solver.dt_us and re-derives the stride).
    #[arg(long, global = true, value_name = "DT_US")]
    dt_override: Option<f64>,
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run config (TOML, or a manifest.json to replay a run).
    Run { config: PathBuf },
    /// Execute a named preset, or print its resolved config.
    Preset {
        name: String,
        /// Print the resolved config as TOML instead of running it.
        #[arg(long)]
        emit_config: bool,
    },
    /// Merge the populations of finished runs and report their differences.
    Compare {
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
    },
    /// Final-population surface over detuning and Rabi-frequency errors.
    Scan { config: PathBuf },
}

/// A TOML config, or the `config` echoed in a run's `manifest.json`.
fn read_config(path: &Path) -> Result<RunConfig, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path.display(), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        RunConfig::from_manifest(&text)
    } else {
        RunConfig::from_toml(&text)
    }
}

fn execute(mut config: RunConfig, verb: Verb, common: &Common) -> Result<(), AppError> {
    Overrides {
        out: common.out.clone(),
        seed: common.seed,
        dt_us: common.dt_override,
    }
    .apply(&mut config);
    let (outcome, dir) = execute_and_write(&config, verb, common.threads)?;
    if !common.quiet {
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        let last = outcome.result.final_populations();
        println!(
            "{}: t = {} us, gain = {}, artifacts in {}",
            outcome.config.name,
            outcome.result.times_us.last().copied().unwrap_or(0.0),
            last.iter().sum::<f64>(),
            dir.display()
        );
        if let Some(scan) = outcome.scan.as_ref() {
            let (pos, neg) = scan.corner_extremes();
            println!("scan spread = {}, corner minimum dOmega>0: {pos}, dOmega<0: {neg}", scan.spread());
        }
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), AppError> {
    let common = &cli.common;
    match cli.command {
        Command::Run { config } => execute(read_config(&config)?, Verb::Run, common),
        Command::Scan { config } => execute(read_config(&config)?, Verb::Scan, common),
        Command::Preset { name, emit_config } => {
            let config = preset(&name)?;
            if emit_config {
                let mut config = config;
                Overrides {
                    out: common.out.clone(),
                    seed: common.seed,
                    dt_us: common.dt_override,
                }
                .apply(&mut config);
                print!("{}", config.resolve()?.to_toml());
                Ok(())
            } else {
                let verb = if config.scan.is_some() { Verb::Scan } else { Verb::Run };
                execute(config, verb, common)
            }
        }
        Command::Compare { dirs } => {
            let runs = dirs.iter().map(|d| load(d)).collect::<Result<Vec<_>, _>>()?;
            let c = compare(&runs)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("compare"));
            std::fs::create_dir_all(&out).map_err(|e| AppError::io(out.display(), e))?;
            for (name, bytes) in [("compare.csv", &c.merged_csv), ("compare_summary.csv", &c.summary_csv)] {
                let path = out.join(name);
                std::fs::write(&path, bytes).map_err(|e| AppError::io(path.display(), e))?;
            }
            if !common.quiet {
                for (a, b, d) in &c.max_abs_diff {
                    println!("{a} vs {b}: max |dn| = {d}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

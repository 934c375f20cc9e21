use clap::{Parser, Subcommand};
use couplab_cli::config::ExperimentConfig;
use couplab_cli::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "couplab",
    version,
    about = "Coupling constructions and convergence diagnostics for Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for grid cells; 0 picks the core count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List catalog instances, delay systems, and experiment kinds.
    List,
    /// Run the recorded assertions of one catalog instance.
    Example {
        /// Catalog anchor, e.g. 5.2 or aperiodic-5.
        anchor: String,
        /// Output directory for the assertion table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn init_threads(threads: usize) {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        builder = builder.num_threads(threads);
    }
    // a second init attempt in the same process is harmless
    let _ = builder.build_global();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let parsed = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            init_threads(threads.unwrap_or(parsed.run.threads));
            match runner::run(&parsed, out.as_deref(), seed) {
                Ok(outcome) => {
                    print!("{}", outcome.summary);
                    println!("artifacts in {}", outcome.out_dir.display());
                    ExitCode::from(runner::exit_code(outcome.verdict) as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::List => {
            print!("{}", runner::list_text());
            ExitCode::SUCCESS
        }
        Command::Example { anchor, out } => {
            let toml = format!(
                "version = 1\nkind = \"example\"\nseed = 7\n\n[instance]\nanchor = {anchor:?}\n"
            );
            let parsed = match ExperimentConfig::parse(&toml) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match runner::run(&parsed, out.as_deref(), None) {
                Ok(outcome) => {
                    print!("{}", outcome.summary);
                    ExitCode::from(runner::exit_code(outcome.verdict) as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::ValidateConfig { config } => match load_config(&config) {
            Ok(parsed) => {
                println!(
                    "ok: kind {} with seed {}",
                    parsed.kind.name(),
                    parsed.seed
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use fedsynth::harness::{self, CommCost, RunConfig};
use fedsynth::Error;

/// Federated learning with synthetic-data update compression.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config file describes.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Master seed (overrides `master_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print `b − a` for two metrics files as CSV.
    Diff { a: PathBuf, b: PathBuf },
    /// Print the float count and compression ratio of a payload.
    Account {
        #[arg(long)]
        points: usize,
        #[arg(long)]
        input_dim: usize,
        #[arg(long)]
        num_classes: usize,
        #[arg(long)]
        model_params: usize,
        /// Count this many step sizes too.
        #[arg(long)]
        etas: Option<usize>,
    },
}

fn load_config(
    config: Option<PathBuf>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    overrides: &[String],
) -> Result<RunConfig, Error> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(&p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Run {
            config,
            output,
            seed,
            overrides,
        } => {
            let cfg = match load_config(config, output, seed, &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match harness::run_experiment(&cfg) {
                Ok(out) => {
                    for t in &out.trajectories {
                        if let Some(last) = t.rows.last() {
                            println!("{}: final accuracy {:.4}", t.name, last.test_accuracy);
                        }
                    }
                    println!("wrote {}", cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
        Command::Diff { a, b } => {
            let run = || -> Result<(), Error> {
                let rows = harness::difference(&harness::read_jsonl(&a)?, &harness::read_jsonl(&b)?);
                harness::write_diff_csv(std::io::stdout().lock(), &rows)
            };
            match run() {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Account {
            points,
            input_dim,
            num_classes,
            model_params,
            etas,
        } => {
            if model_params == 0 {
                eprintln!("error: --model-params must be positive");
                return ExitCode::from(1);
            }
            let cost = CommCost {
                points,
                input_dim,
                num_classes,
                include_etas: etas.is_some(),
                num_etas: etas.unwrap_or(0),
                model_param_count: model_params,
            };
            let ratio = harness::compression_ratio(&cost);
            println!("floats {}", harness::payload_float_count(&cost));
            println!("ratio {ratio:.5} ({:.1}%)", 100.0 * ratio);
            ExitCode::SUCCESS
        }
    }
}

//! Experiment CLI: `run` a config end to end, print the `theory` table,
//! drive an `ablate` comparison, or `embed` a checkpoint's features.

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use sfda::config::ExperimentConfig;
use sfda::runner::{self, AblateMode};
use sfda::SfdaError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Output-dir override, checked between the config value and the CLI flag.
const OUTPUT_DIR_ENV: &str = "SFDA_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "sfda",
    version,
    about = "Source-free domain adaptation with a classifier bank"
)]
struct Cli {
    /// Log verbosity: -v for debug, -vv for trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, select, and adapt for every seed in the config, writing
    /// metrics.csv, selection.csv, embedding.csv, and checkpoints.
    Run {
        /// Experiment config (TOML, strict keys).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; beats the config value and SFDA_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the disagreement-ratio table (exact, brute-force oracle, and
    /// recurrence check) as CSV on stdout.
    Theory {
        #[arg(long, default_value_t = 12)]
        c_max: usize,
        #[arg(long, default_value_t = 13)]
        k_max: usize,
    },
    /// Run a controlled comparison and write its CSV.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: CliAblateMode,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Project a checkpoint's features over the config's data to 2-D and
    /// write an embedding CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (default: embedding.csv in the output dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliAblateMode {
    BiVsMany,
    TraceVsPseudo,
}

impl From<CliAblateMode> for AblateMode {
    fn from(m: CliAblateMode) -> Self {
        match m {
            CliAblateMode::BiVsMany => AblateMode::BiVsMany,
            CliAblateMode::TraceVsPseudo => AblateMode::TraceVsPseudo,
        }
    }
}

fn resolve_output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    config
        .experiment
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("sfda-out"))
}

fn load_config(path: &Path, seed_override: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed_override {
        cfg.experiment.seeds = vec![seed];
    }
    Ok(cfg)
}

/// Distinct nonzero statuses per failure family: 2 config, 3 data,
/// 4 numeric abort, 1 anything else.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SfdaError>() {
        Some(SfdaError::InvalidConfig(_)) => 2,
        Some(
            SfdaError::IdxWrongMagic { .. }
            | SfdaError::IdxTruncated { .. }
            | SfdaError::IdxCountMismatch { .. }
            | SfdaError::Io { .. }
            | SfdaError::MissingLabels(_),
        ) => 3,
        Some(SfdaError::NonFiniteLoss { .. } | SfdaError::NonFiniteCheck { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            config,
            output_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let out_dir = resolve_output_dir(output_dir, &cfg);
            let runs = runner::run(&cfg, &out_dir)?;
            for run in &runs {
                println!(
                    "seed {}: source-only target accuracy {:.4}, adapted {:.4}",
                    run.seed, run.source_only_target_acc, run.adapted_target_acc
                );
            }
            println!("artifacts written to {}", out_dir.display());
            Ok(())
        }
        Command::Theory { c_max, k_max } => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            runner::theory_table(c_max, k_max, &mut lock)?;
            Ok(())
        }
        Command::Ablate {
            config,
            mode,
            output_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let out_dir = resolve_output_dir(output_dir, &cfg);
            let path = runner::ablate(&cfg, mode.into(), &out_dir)?;
            println!("ablation written to {}", path.display());
            Ok(())
        }
        Command::Embed {
            checkpoint,
            config,
            out,
            output_dir,
        } => {
            let cfg = load_config(&config, None)?;
            let out_dir = resolve_output_dir(output_dir, &cfg);
            let out_path = match out {
                Some(p) => p,
                None => {
                    std::fs::create_dir_all(&out_dir)?;
                    out_dir.join("embedding.csv")
                }
            };
            runner::embed(&checkpoint, &cfg, &out_path)?;
            println!("embedding written to {}", out_path.display());
            Ok(())
        }
    }
}

//! attentrack: operator CLI for the synthetic BEV tracking stack.
//!
//! Subcommands: `gen` scenarios, `train` one curriculum stage, `track` a
//! model over scenarios, `eval` tracks against ground truth, and `ablate`
//! two trained arms against each other. Every command is a pure function of
//! its config file, flags, seed, and input files, and writes a manifest
//! hashing everything it touched.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 contract
//! violation. The `ATTENTRACK_SEED` environment variable overrides `--seed`
//! everywhere.

mod commands;
mod config;
mod fsio;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use commands::ablate::{AblateArgs, AblateWhich};
use commands::eval::EvalArgs;
use commands::gen::GenArgs;
use commands::track::TrackArgs;
use commands::train::TrainArgs;

#[derive(Parser)]
#[command(
    name = "attentrack",
    version,
    about = "Synthetic BEV multi-object tracking: generate, train, track, evaluate, ablate."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Detection-stream mode: `lidar_only` runs the single coarse association
/// stream; `fusion` adds the fine stream and the dual-association agreement
/// rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    #[value(name = "lidar_only")]
    LidarOnly,
    #[value(name = "fusion")]
    Fusion,
}

impl Mode {
    fn fusion(self) -> bool {
        self == Mode::Fusion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    #[value(name = "da_transformer")]
    DaTransformer,
    #[value(name = "qem")]
    Qem,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenarios as JSONL files.
    Gen {
        /// TOML config with `count` and a `[scenario]` section.
        #[arg(long)]
        config: PathBuf,
        /// Base seed; scenario `i` uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for generation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// File-name prefix for the generated scenarios.
        #[arg(long, default_value = "scenario")]
        prefix: String,
    },
    /// Train one curriculum stage (encoder, association, or joint).
    Train {
        /// TOML config with `stage`, `[model]`, and `[train]`.
        #[arg(long)]
        config: PathBuf,
        /// Seeds fresh model weights; `seed + 1` drives sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario file or directory to train on.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint.json and loss.csv.
        #[arg(long)]
        out: PathBuf,
        /// Previous stage's checkpoint (required for association/joint);
        /// passing the same stage's checkpoint resumes it.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Overrides the config's association-stream architecture when
        /// starting fresh.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Run a tracker over scenarios, writing `<stem>.tracks.jsonl` files.
    Track {
        /// Trained checkpoint to load (exclusive with --config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TOML config with a `[model]` section for an untrained model
        /// (exclusive with --checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seeds fresh model weights when --config is used.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario file or directory to track.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's association-stream architecture when
        /// starting fresh.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Score tracks against ground truth; per-scenario reports + summary.
    Eval {
        /// Tracks file or directory (`<stem>.tracks.jsonl`).
        #[arg(long)]
        tracks: PathBuf,
        /// Ground-truth scenario file or directory (`<stem>.jsonl`).
        #[arg(long)]
        gt: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Recall points for the average metrics.
        #[arg(long, default_value_t = 40)]
        n_points: usize,
        /// Center-distance match gate in meters.
        #[arg(long, default_value_t = 2.0)]
        match_threshold_m: f64,
        /// Worker threads for evaluation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare two trained arms (with/without a component) on a benchmark.
    Ablate {
        /// Which component the arms differ in.
        #[arg(long, value_enum)]
        which: Which,
        /// TOML config with the benchmark `[scenario]` and `[eval]` shape.
        #[arg(long)]
        config: PathBuf,
        /// Base seed; evaluation scene `i` uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for table.csv.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint of the arm with the component enabled.
        #[arg(long)]
        arm_with: PathBuf,
        /// Checkpoint of the arm with the component disabled.
        #[arg(long)]
        arm_without: PathBuf,
    },
}

/// `ATTENTRACK_SEED` overrides every `--seed` after parsing.
fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("ATTENTRACK_SEED") {
        Ok(text) => {
            let seed = text.parse::<u64>().map_err(|_| {
                attentrack_core::Error::config(
                    "ATTENTRACK_SEED",
                    format!("must be an unsigned integer, got `{text}`"),
                )
            })?;
            Ok(Some(seed))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(attentrack_core::Error::config(
            "ATTENTRACK_SEED",
            "must be valid unicode",
        )
        .into()),
    }
}

fn dispatch(command: Command, seed_override: Option<u64>) -> anyhow::Result<()> {
    let seed = |flag: u64| seed_override.unwrap_or(flag);
    match command {
        Command::Gen {
            config,
            seed: s,
            out,
            jobs,
            prefix,
        } => commands::gen::run(&GenArgs {
            config,
            seed: seed(s),
            out,
            jobs,
            prefix,
        }),
        Command::Train {
            config,
            seed: s,
            data,
            out,
            init_from,
            mode,
        } => commands::train::run(&TrainArgs {
            config,
            seed: seed(s),
            data,
            out,
            init_from,
            fusion_mode: mode.map(Mode::fusion),
        }),
        Command::Track {
            checkpoint,
            config,
            seed: s,
            data,
            out,
            mode,
        } => commands::track::run(&TrackArgs {
            checkpoint,
            config,
            seed: seed(s),
            data,
            out,
            fusion_mode: mode.map(Mode::fusion),
        }),
        Command::Eval {
            tracks,
            gt,
            out,
            n_points,
            match_threshold_m,
            jobs,
        } => commands::eval::run(&EvalArgs {
            tracks,
            gt,
            out,
            n_points,
            match_threshold_m,
            jobs,
        }),
        Command::Ablate {
            which,
            config,
            seed: s,
            out,
            arm_with,
            arm_without,
        } => commands::ablate::run(&AblateArgs {
            which: match which {
                Which::DaTransformer => AblateWhich::DaTransformer,
                Which::Qem => AblateWhich::Qem,
            },
            config,
            seed: seed(s),
            out,
            arm_with,
            arm_without,
        }),
    }
}

/// 2 for config errors, 3 for data errors, 4 for everything that indicates a
/// broken internal contract.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<attentrack_core::Error>() {
            return match e {
                attentrack_core::Error::Config { .. } => 2,
                attentrack_core::Error::Data(_) => 3,
                _ => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    4
}

fn main() {
    let cli = Cli::parse();
    let result = env_seed().and_then(|seed_override| dispatch(cli.command, seed_override));
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crgtsr::app::{
    cmd_eval, cmd_gen_scenes, cmd_pretrain, cmd_train, exit_code, EvalArgs, GenScenesArgs, PretrainArgs, TrainArgs,
};
use crgtsr::pretrain::RolloutPolicy;

#[derive(Parser)]
#[command(name = "crgtsr", version, about = "Object-goal navigation with relation graphs and sequence attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetPolicy {
    Expert,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Imitation pre-training of the representation extractor.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "expert")]
        dataset_policy: DatasetPolicy,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// A3C training, optionally from a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Greedy evaluation with the split report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, required_unless_present = "expert")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the shortest-path expert instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        expert: bool,
        /// Directory of scene files (default: the held-out scenes).
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        episodes_per_scene: usize,
    },
    /// Write the training and held-out scenes as text files.
    GenScenes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(command: Command) -> crgtsr::Result<()> {
    match command {
        Command::Pretrain { config, out_dir, dataset_policy, episodes, epochs } => {
            let dataset_policy = match dataset_policy {
                DatasetPolicy::Expert => RolloutPolicy::Expert,
                DatasetPolicy::Random => RolloutPolicy::Random,
            };
            let s = cmd_pretrain(&PretrainArgs { config, out_dir, dataset_policy, episodes, epochs })?;
            println!(
                "{} training / {} held-out windows, majority baseline {:.3}, final accuracy {:.3}",
                s.train_windows,
                s.validation_windows,
                s.majority_baseline,
                s.accuracy.last().copied().unwrap_or(0.0)
            );
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Train { config, out_dir, init, workers, episodes } => {
            let s = cmd_train(&TrainArgs { config, out_dir, init, workers, episodes })?;
            println!("{} episodes, {} successes, store version {}", s.episodes, s.successes, s.version);
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Eval { config, out_dir, checkpoint, expert, scenes, runs, episodes_per_scene } => {
            let report = cmd_eval(&EvalArgs { config, out_dir, checkpoint, expert, scenes, runs, episodes_per_scene })?;
            print!("{report}");
        }
        Command::GenScenes { config, out_dir } => {
            let n = cmd_gen_scenes(&GenScenesArgs { config, out_dir })?;
            println!("wrote {n} scenes");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

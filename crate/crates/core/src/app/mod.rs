//! Run configuration, checkpoints and the command implementations behind
//! the `crgtsr` binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    build_store, cmd_eval, cmd_gen_scenes, cmd_pretrain, cmd_train, exit_code, load_scene_dir, EvalArgs,
    GenScenesArgs, PretrainArgs, PretrainSummary, TrainArgs, TrainSummary, EVAL_REPORT, EVAL_RESULTS,
    PRETRAIN_CHECKPOINT, PRETRAIN_LOG, TRAIN_CHECKPOINT, TRAIN_STATS,
};
pub use config::{RunConfig, SEED_ENV};

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval_metrics::{
    run_eval, split_report, EpisodeResult, EvalConfig, ExpertAgent, PolicyAgent, SplitReport, RESULTS_HEADER,
};
use crate::gridworld::Scene;
use crate::policy::{run_workers, NavigationModel, ParameterStore, WorkerContext, STATS_HEADER};
use crate::pretrain::{
    generate_dataset, transfer_weights, write_atomic, DatasetSpec, ImitationTrainer, RolloutPolicy, TrajectoryDataset,
};
use crate::tensor::{AdamConfig, ParamSet};

/// Exit status for an error: 2 for bad configuration or arguments, 1 for
/// everything that fails at run time.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const TRAIN_CHECKPOINT: &str = "train.ckpt";
pub const TRAIN_STATS: &str = "train_stats.csv";
pub const EVAL_RESULTS: &str = "eval_results.csv";
pub const EVAL_REPORT: &str = "eval_report.csv";

#[derive(Clone, Debug)]
pub struct PretrainArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub dataset_policy: RolloutPolicy,
    /// Overrides `pretrain_episodes`.
    pub episodes: Option<usize>,
    /// Overrides `pretrain_epochs`.
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub train_windows: usize,
    pub validation_windows: usize,
    /// Held-out top-1 accuracy after each epoch.
    pub accuracy: Vec<f64>,
    /// Held-out accuracy of always predicting the most frequent label.
    pub majority_baseline: f64,
}

fn cached_dataset(path: &Path, scenes: &[Arc<Scene>], spec: &DatasetSpec) -> Result<TrajectoryDataset> {
    if path.exists() {
        let data = TrajectoryDataset::load(path)?;
        if data.seq_len == spec.seq_len {
            log::info!("loaded cached dataset {}", path.display());
            return Ok(data);
        }
    }
    let data = generate_dataset(scenes, spec)?;
    data.save(path)?;
    Ok(data)
}

/// Generates (or reloads) the windows dataset, runs the imitation epochs
/// and writes the checkpoint and the per-epoch accuracy log.
pub fn cmd_pretrain(args: &PretrainArgs) -> Result<PretrainSummary> {
    let config = RunConfig::load(&args.config)?;
    let episodes = args.episodes.unwrap_or(config.pretrain_episodes);
    let epochs = args.epochs.unwrap_or(config.pretrain_epochs);
    if episodes == 0 || epochs == 0 {
        return Err(Error::InvalidArgument("episodes and epochs must be positive".into()));
    }
    prepare_out_dir(&args.out_dir)?;
    let hash = config.model_hash();
    let spec = DatasetSpec {
        episodes,
        policy: args.dataset_policy,
        seed: config.seed,
        max_steps: config.max_steps,
        seq_len: config.model.seq_len,
    };
    let train_scenes = config.generate_scenes(&config.train_scene_seeds())?;
    let cache = args.out_dir.join(format!(
        "dataset-{}-{episodes}-{}-{}x{}.bin",
        args.dataset_policy.name(),
        config.seed,
        config.scene.rows,
        config.scene.cols
    ));
    let train = cached_dataset(&cache, &train_scenes, &spec)?;
    let eval_scenes = config.generate_scenes(&config.eval_scene_seeds())?;
    let held_out = DatasetSpec {
        episodes: (episodes / 4).max(1),
        policy: RolloutPolicy::Expert,
        seed: config.seed.wrapping_add(1),
        ..spec
    };
    let validation = generate_dataset(&eval_scenes, &held_out)?;
    let hist = validation.label_histogram();
    let majority_baseline = *hist.iter().max().unwrap_or(&0) as f64 / validation.len().max(1) as f64;

    let mut trainer = ImitationTrainer::new(&config.model, config.seed, config.pretrain_lr)?;
    trainer.batch_size = config.pretrain_batch;
    trainer.clip = config.grad_clip;
    let mut log_text = String::from("epoch,lr,train_loss,val_loss,val_accuracy\n");
    let mut accuracy = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = trainer.current_lr();
        let train_loss = trainer.epoch(&train)?;
        let (acc, val_loss) = trainer.evaluate(&validation)?;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, held-out loss {val_loss:.4}, accuracy {acc:.3}");
        log_text.push_str(&format!("{epoch},{lr},{train_loss},{val_loss},{acc}\n"));
        accuracy.push(acc);
    }
    let checkpoint = args.out_dir.join(PRETRAIN_CHECKPOINT);
    Checkpoint::from_params(&trainer.params, Some(&trainer.adam), hash, trainer.epochs_done as u64).save(&checkpoint)?;
    write_atomic(&args.out_dir.join(PRETRAIN_LOG), log_text.as_bytes())?;
    Ok(PretrainSummary {
        checkpoint,
        train_windows: train.len(),
        validation_windows: validation.len(),
        accuracy,
        majority_baseline,
    })
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    /// Pre-trained or previously trained checkpoint.
    pub init: Option<PathBuf>,
    pub workers: Option<usize>,
    pub episodes: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub successes: usize,
    /// Store version at the end of the run.
    pub version: u64,
}

fn params_from_checkpoint(ckpt: &Checkpoint) -> ParamSet {
    let mut params = ParamSet::new();
    for (name, t) in &ckpt.tensors {
        params.register(name.clone(), t.clone());
    }
    params
}

/// Builds the parameter store for `config`, optionally initialized from a
/// checkpoint. A checkpoint holding the full navigation model resumes it,
/// version counter included; any other compatible checkpoint contributes
/// its shared representation tensors only.
pub fn build_store(config: &RunConfig, init: Option<&Path>) -> Result<(NavigationModel, ParameterStore)> {
    let (mut params, model) = NavigationModel::initialize(&config.model, config.seed)?;
    let adam = AdamConfig::with_lr(config.rl_lr);
    let Some(path) = init else {
        return Ok((model, ParameterStore::with_adam(params, adam, config.grad_clip)));
    };
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_hash(config.model_hash())?;
    let full = params.iter().all(|(_, name, _)| ckpt.tensor(name).is_some());
    if full {
        let store = ParameterStore::with_adam(params, adam, config.grad_clip);
        ckpt.restore_into(&store).map_err(|e| match e {
            Error::Checkpoint { message, .. } => Error::Checkpoint { path: path.to_path_buf(), message },
            other => other,
        })?;
        store.set_learning_rate(config.rl_lr);
        return Ok((model, store));
    }
    let copied = transfer_weights(&params_from_checkpoint(&ckpt), &mut params)?;
    log::info!("initialized {} shared tensors from {}", copied.len(), path.display());
    Ok((model, ParameterStore::with_adam(params, adam, config.grad_clip)))
}

/// Runs the A3C worker pool, streaming per-episode stats to CSV and
/// checkpointing every `checkpoint_every` episodes.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(n) = args.episodes {
        config.episodes = n;
    }
    if config.workers == 0 || config.episodes == 0 {
        return Err(Error::InvalidArgument("workers and episodes must be positive".into()));
    }
    prepare_out_dir(&args.out_dir)?;
    let hash = config.model_hash();
    let (model, store) = build_store(&config, args.init.as_deref())?;
    let store = Arc::new(store);
    let scenes = config.generate_scenes(&config.train_scene_seeds())?;
    let ctx = WorkerContext::new(model, scenes, Arc::clone(&store), config.train_config())?;

    let checkpoint = args.out_dir.join(TRAIN_CHECKPOINT);
    let stats_file = tempfile::NamedTempFile::new_in(&args.out_dir)?;
    let mut out = BufWriter::new(stats_file.reopen()?);
    writeln!(out, "{STATS_HEADER}")?;
    let mut io_error = None;
    let mut finished = 0u64;
    let stats = run_workers(&ctx, |s| {
        finished += 1;
        let mut step = || -> Result<()> {
            writeln!(out, "{s}")?;
            if config.checkpoint_every > 0 && finished % config.checkpoint_every == 0 {
                out.flush()?;
                save_checkpoint(&checkpoint, &store, hash)?;
            }
            Ok(())
        };
        match step() {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_error = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    out.flush()?;
    drop(out);
    save_checkpoint(&checkpoint, &store, hash)?;
    stats_file.persist(args.out_dir.join(TRAIN_STATS)).map_err(|e| Error::Io(e.error))?;
    Ok(TrainSummary {
        checkpoint,
        episodes: stats.len(),
        successes: stats.iter().filter(|s| s.success).count(),
        version: store.version(),
    })
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the shortest-path expert instead of a checkpoint.
    pub expert: bool,
    /// Directory of scene files; defaults to the held-out scenes.
    pub scenes: Option<PathBuf>,
    pub runs: usize,
    pub episodes_per_scene: usize,
}

/// Loads every `*.txt` scene in `dir`, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Arc<Scene>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no scene files in {}", dir.display())));
    }
    paths.iter().map(|p| Scene::load(p).map(Arc::new)).collect()
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(run as u64 + 1))
}

/// Greedy evaluation over `runs` independently seeded runs; writes the
/// per-episode CSV and the split report.
pub fn cmd_eval(args: &EvalArgs) -> Result<SplitReport> {
    let config = RunConfig::load(&args.config)?;
    if args.runs == 0 || args.episodes_per_scene == 0 {
        return Err(Error::InvalidArgument("runs and episodes per scene must be positive".into()));
    }
    if args.expert == args.checkpoint.is_some() {
        return Err(Error::InvalidArgument("pass exactly one of a checkpoint or the expert flag".into()));
    }
    prepare_out_dir(&args.out_dir)?;
    let scenes = match &args.scenes {
        Some(dir) => load_scene_dir(dir)?,
        None => config.generate_scenes(&config.eval_scene_seeds())?,
    };
    let policy = match &args.checkpoint {
        Some(path) => {
            let (template, model) = NavigationModel::initialize(&config.model, config.seed)?;
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_hash(config.model_hash())?;
            let params = ckpt.params_like(&template).map_err(|e| match e {
                Error::Checkpoint { message, .. } => Error::Checkpoint { path: path.clone(), message },
                other => other,
            })?;
            Some((model, Arc::new(params)))
        }
        None => None,
    };
    let mut results: Vec<EpisodeResult> = Vec::new();
    for run in 0..args.runs {
        let eval = EvalConfig {
            episodes_per_scene: args.episodes_per_scene,
            seed: run_seed(config.seed, run),
            max_steps: config.max_steps,
            run,
        };
        let batch = match &policy {
            Some((model, params)) => run_eval(|| PolicyAgent::new(model.clone(), Arc::clone(params)), &scenes, &eval)?,
            None => run_eval(|| ExpertAgent, &scenes, &eval)?,
        };
        results.extend(batch);
    }
    let report = split_report(&results)?;
    let mut csv = format!("{RESULTS_HEADER}\n");
    for r in &results {
        csv.push_str(&format!("{r}\n"));
    }
    write_atomic(&args.out_dir.join(EVAL_RESULTS), csv.as_bytes())?;
    write_atomic(&args.out_dir.join(EVAL_REPORT), report.to_csv().as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GenScenesArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
}

/// Writes the training and held-out scenes as text files under
/// `scenes/train` and `scenes/eval`. Returns the number written.
pub fn cmd_gen_scenes(args: &GenScenesArgs) -> Result<usize> {
    let config = RunConfig::load(&args.config)?;
    let mut written = 0;
    for (split, seeds) in [("train", config.train_scene_seeds()), ("eval", config.eval_scene_seeds())] {
        let dir = args.out_dir.join("scenes").join(split);
        prepare_out_dir(&dir)?;
        for (i, scene) in config.generate_scenes(&seeds)?.iter().enumerate() {
            write_atomic(&dir.join(format!("scene_{i:03}.txt")), scene.to_text().as_bytes())?;
            written += 1;
        }
    }
    Ok(written)
}

use std::collections::VecDeque;
use std::fmt;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    a3c_loss, discounted_returns, sample_action, NavigationModel, ParameterStore, PolicyState, StateVars, StepRecord,
    DEFAULT_ENTROPY_WEIGHT, DEFAULT_GAMMA, DEFAULT_HORIZON,
};
use crate::error::{Error, Result};
use crate::gridworld::{Action, Episode, Observation, Scene};
use crate::tensor::Graph;

pub const STATS_HEADER: &str = "episode,worker,target,steps,reward,success,spl_term";

/// Reinforcement-learning schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub workers: usize,
    /// Total episode budget shared by all workers.
    pub episodes: u64,
    pub max_steps: u32,
    pub gamma: f64,
    pub entropy_weight: f64,
    /// Steps per gradient submission.
    pub horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 2,
            episodes: 20_000,
            max_steps: 50,
            gamma: DEFAULT_GAMMA,
            entropy_weight: DEFAULT_ENTROPY_WEIGHT,
            horizon: DEFAULT_HORIZON,
        }
    }
}

/// Summary of one finished training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode: u64,
    pub worker: usize,
    pub target: usize,
    pub steps: u32,
    pub reward: f64,
    pub success: bool,
    pub spl_term: f64,
}

impl fmt::Display for EpisodeStats {
    /// One CSV row in [`STATS_HEADER`] order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.episode,
            self.worker,
            self.target,
            self.steps,
            self.reward,
            u8::from(self.success),
            self.spl_term
        )
    }
}

/// Everything the workers share: the model layout, the scenes, the store
/// and the episode budget.
#[derive(Debug)]
pub struct WorkerContext {
    pub model: NavigationModel,
    pub scenes: Vec<Arc<Scene>>,
    pub store: Arc<ParameterStore>,
    pub config: TrainConfig,
    next_episode: AtomicU64,
    stop: AtomicBool,
}

impl WorkerContext {
    pub fn new(
        model: NavigationModel,
        scenes: Vec<Arc<Scene>>,
        store: Arc<ParameterStore>,
        config: TrainConfig,
    ) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::InvalidArgument("no training scenes".into()));
        }
        if config.workers == 0 || config.horizon == 0 {
            return Err(Error::InvalidArgument("workers and horizon must be positive".into()));
        }
        Ok(Self { model, scenes, store, config, next_episode: AtomicU64::new(0), stop: AtomicBool::new(false) })
    }

    /// Asks every worker to finish its current episode and exit.
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    fn claim_episode(&self) -> Option<u64> {
        if self.stop.load(Ordering::SeqCst) {
            return None;
        }
        let id = self.next_episode.fetch_add(1, Ordering::SeqCst);
        (id < self.config.episodes).then_some(id)
    }
}

fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64 + 1);
    rng
}

/// Runs episodes until the shared budget is exhausted or a stop is
/// requested, passing each finished episode to `emit`. Returns the number
/// of completed episodes.
///
/// An episode whose environment cannot be set up is skipped with a warning;
/// model or store errors abort the worker.
pub fn worker_loop(worker: usize, ctx: &WorkerContext, mut emit: impl FnMut(EpisodeStats)) -> Result<u64> {
    let mut rng = worker_rng(ctx.config.seed, worker);
    let mut done = 0;
    while let Some(id) = ctx.claim_episode() {
        let scene = Arc::clone(&ctx.scenes[rng.random_range(0..ctx.scenes.len())]);
        let targets = scene.categories_present();
        let target = targets[rng.random_range(0..targets.len())];
        let episode_seed = rng.random::<u64>();
        let episode = match Episode::reset(scene, target, episode_seed, ctx.config.max_steps) {
            Ok(ep) => ep,
            Err(e) => {
                log::warn!("worker {worker}: skipping episode {id}: {e}");
                continue;
            }
        };
        let ep = train_episode(ctx, episode, &mut rng)?;
        let spl_term = if ep.is_success() {
            f64::from(ep.optimal_length()) / f64::from(ep.steps_taken().max(ep.optimal_length()))
        } else {
            0.0
        };
        emit(EpisodeStats {
            episode: id,
            worker,
            target,
            steps: ep.steps_taken(),
            reward: ep.total_reward(),
            success: ep.is_success(),
            spl_term,
        });
        done += 1;
    }
    Ok(done)
}

fn train_episode(ctx: &WorkerContext, mut ep: Episode, rng: &mut ChaCha8Rng) -> Result<Episode> {
    let model = &ctx.model;
    let seq_len = model.config().seq_len;
    let target = ep.target();
    let mut window: VecDeque<Observation> = VecDeque::from([ep.observation().clone()]);
    let mut state = PolicyState::zeros(model.policy.d_hidden());
    while !ep.is_done() {
        let snapshot = ctx.store.snapshot();
        let mut g = Graph::new(&snapshot.params);
        let mut vars = StateVars::bind(&mut g, &state);
        let mut records = Vec::with_capacity(ctx.config.horizon);
        let mut rewards = Vec::with_capacity(ctx.config.horizon);
        while records.len() < ctx.config.horizon && !ep.is_done() {
            let refs: Vec<&Observation> = window.iter().collect();
            let out = model.step(&mut g, &refs, target, vars)?;
            let index = sample_action(g.value(out.logits).data(), rng);
            let action = Action::from_index(index).expect("policy has one logit per action");
            let outcome = ep.step(action)?;
            records.push(StepRecord { logits: out.logits, value: out.value, action: index });
            rewards.push(outcome.reward);
            vars = StateVars { prev_action: Some(action), ..out.state };
            window.push_back(ep.observation().clone());
            if window.len() > seq_len {
                window.pop_front();
            }
        }
        let bootstrap = if ep.is_done() {
            0.0
        } else {
            let refs: Vec<&Observation> = window.iter().collect();
            let out = model.step(&mut g, &refs, target, vars)?;
            g.value(out.value).item()
        };
        let returns = discounted_returns(&rewards, ctx.config.gamma, bootstrap)?;
        let loss = a3c_loss(&mut g, &records, &returns, ctx.config.entropy_weight)?;
        g.backward(loss.total)?;
        ctx.store.apply(g.gradients())?;
        state = vars.to_state(&g);
    }
    Ok(ep)
}

/// Runs `ctx.config.workers` workers on scoped threads and feeds every
/// finished episode to `on_episode` on the calling thread, in arrival
/// order. Returning `Break` stops all workers after their current episode.
/// The returned stats are sorted by episode id.
pub fn run_workers(
    ctx: &WorkerContext,
    mut on_episode: impl FnMut(&EpisodeStats) -> ControlFlow<()>,
) -> Result<Vec<EpisodeStats>> {
    let (tx, rx) = mpsc::channel();
    let mut all = Vec::new();
    let results: Vec<Result<u64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..ctx.config.workers)
            .map(|worker| {
                let tx = tx.clone();
                scope.spawn(move || {
                    let r = worker_loop(worker, ctx, |s| {
                        let _ = tx.send(s);
                    });
                    if r.is_err() {
                        ctx.request_stop();
                    }
                    r
                })
            })
            .collect();
        drop(tx);
        for stats in rx {
            if on_episode(&stats).is_break() {
                ctx.request_stop();
            }
            all.push(stats);
        }
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    for r in results {
        r?;
    }
    all.sort_by_key(|s| s.episode);
    Ok(all)
}

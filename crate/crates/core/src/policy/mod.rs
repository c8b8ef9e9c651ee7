//! LSTM actor-critic over the visual representation, and asynchronous
//! advantage actor-critic training against a shared parameter store.

mod store;
mod worker;

use rand::Rng;

pub use store::{Optimizer, ParameterStore, Snapshot};
pub use worker::{run_workers, worker_loop, EpisodeStats, TrainConfig, WorkerContext, STATS_HEADER};

use crate::config::ModelConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::gridworld::{Action, Observation};
use crate::tensor::{lstm_cell, Graph, LstmParams, ParamId, ParamSet, Tape, Tensor, Var};
use crate::tsr::Linear;

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_ENTROPY_WEIGHT: f64 = 0.01;
pub const DEFAULT_HORIZON: usize = 20;

/// Recurrent state carried between steps of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub h: Tensor,
    pub c: Tensor,
    pub prev_action: Option<Action>,
}

impl PolicyState {
    pub fn zeros(d_hidden: usize) -> Self {
        Self { h: Tensor::zeros(&[1, d_hidden]), c: Tensor::zeros(&[1, d_hidden]), prev_action: None }
    }
}

/// Tape handles of the recurrent state inside one graph.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
    pub prev_action: Option<Action>,
}

impl StateVars {
    /// Binds `state` as constants, cutting gradients into earlier segments.
    pub fn bind(tape: &mut Tape, state: &PolicyState) -> Self {
        Self { h: tape.constant(state.h.clone()), c: tape.constant(state.c.clone()), prev_action: state.prev_action }
    }

    pub fn to_state(self, tape: &Tape) -> PolicyState {
        PolicyState { h: tape.value(self.h).clone(), c: tape.value(self.c).clone(), prev_action: self.prev_action }
    }
}

/// One policy evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PolicyStep {
    /// `1 × 6`
    pub logits: Var,
    /// `1 × 1`
    pub value: Var,
    pub state: StateVars,
}

/// LSTM with an actor head (6 logits) and a critic head (scalar value).
#[derive(Clone, Copy, Debug)]
pub struct ActorCritic {
    pub target_embedding: ParamId,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub actor: Linear,
    pub critic: Linear,
    d_hidden: usize,
    n_categories: usize,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Self {
        let (d_h, n) = (config.d_hidden, config.n_categories);
        let d_in = config.c_global + config.c_target + Action::COUNT;
        let target_embedding = params.register("policy.target", Tensor::randn(&[n, config.c_target], 1.0, rng));
        let w_input =
            params.register("policy.lstm.w_input", Tensor::randn(&[d_in, 4 * d_h], 1.0 / (d_in as f64).sqrt(), rng));
        let w_hidden =
            params.register("policy.lstm.w_hidden", Tensor::randn(&[d_h, 4 * d_h], 1.0 / (d_h as f64).sqrt(), rng));
        let bias = params.register("policy.lstm.bias", Tensor::zeros(&[1, 4 * d_h]));
        let actor = Linear::new(params, "policy.actor", d_h, Action::COUNT, true, rng);
        let critic = Linear::new(params, "policy.critic", d_h, 1, true, rng);
        // near-uniform initial policy
        params.get_mut(actor.weight).data_mut().iter_mut().for_each(|w| *w *= 0.01);
        Self { target_embedding, w_input, w_hidden, bias, actor, critic, d_hidden: d_h, n_categories: n }
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    /// LSTM step on `[F ‖ target embedding ‖ previous-action one-hot]`.
    pub fn forward(&self, g: &mut Graph, f: Var, target: usize, state: StateVars) -> Result<PolicyStep> {
        if target >= self.n_categories {
            return Err(Error::TargetOutOfRange { target, classes: self.n_categories });
        }
        let table = g.p(self.target_embedding);
        let target_row = g.gather_rows(table, &[target])?;
        let mut onehot = Tensor::zeros(&[1, Action::COUNT]);
        if let Some(a) = state.prev_action {
            onehot.set(0, a.index(), 1.0);
        }
        let onehot = g.constant(onehot);
        let x = g.concat(&[f, target_row, onehot], 1)?;
        let lstm = LstmParams { w_input: g.p(self.w_input), w_hidden: g.p(self.w_hidden), bias: g.p(self.bias) };
        let (h, c) = lstm_cell(g, x, state.h, state.c, &lstm)?;
        let logits = self.actor.forward(g, h)?;
        let value = self.critic.forward(g, h)?;
        Ok(PolicyStep { logits, value, state: StateVars { h, c, prev_action: state.prev_action } })
    }
}

/// Encoder plus actor-critic: everything trained by reinforcement learning.
#[derive(Clone, Debug)]
pub struct NavigationModel {
    pub encoder: Encoder,
    pub policy: ActorCritic,
}

impl NavigationModel {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(params, config, rng)?;
        let policy = ActorCritic::new(params, config, rng);
        Ok(Self { encoder, policy })
    }

    /// Fresh parameters and model from a seed.
    pub fn initialize(config: &ModelConfig, seed: u64) -> Result<(ParamSet, Self)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let model = Self::new(&mut params, config, &mut rng)?;
        Ok((params, model))
    }

    pub fn config(&self) -> &ModelConfig {
        self.encoder.config()
    }

    /// Encodes the observation window and advances the policy one step.
    pub fn step(
        &self,
        g: &mut Graph,
        window: &[&Observation],
        target: usize,
        state: StateVars,
    ) -> Result<PolicyStep> {
        let enc = self.encoder.encode(g, window, target)?;
        self.policy.forward(g, enc.f, target, state)
    }
}

/// `R_t = r_t + γ·R_{t+1}`, seeded with `bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("no rewards to discount".into()));
    }
    if !(gamma >= 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut running = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        running = r + gamma * running;
        *o = running;
    }
    Ok(out)
}

/// Tape handles of one rollout step, as consumed by [`a3c_loss`].
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub logits: Var,
    pub value: Var,
    pub action: usize,
}

/// Scalar loss terms of one update.
#[derive(Clone, Copy, Debug)]
pub struct A3cLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    /// Summed entropy (the loss subtracts `β` times this).
    pub entropy: Var,
}

/// `−Σ log π(a_t)·(R_t − V_t) + ½Σ(R_t − V_t)² − β·Σ H(π_t)`.
///
/// The advantage in the policy term is a constant, so the critic receives
/// gradient only through the value term.
pub fn a3c_loss(tape: &mut Tape, steps: &[StepRecord], returns: &[f64], entropy_weight: f64) -> Result<A3cLoss> {
    if steps.is_empty() || steps.len() != returns.len() {
        return Err(Error::InvalidArgument(format!(
            "{} steps but {} returns",
            steps.len(),
            returns.len()
        )));
    }
    let mut policy = tape.constant(Tensor::scalar(0.0));
    let mut value = tape.constant(Tensor::scalar(0.0));
    let mut entropy = tape.constant(Tensor::scalar(0.0));
    for (step, &ret) in steps.iter().zip(returns) {
        let logp = tape.log_softmax(step.logits, 1)?;
        let p = tape.softmax(step.logits, 1)?;
        let advantage = ret - tape.value(step.value).item();
        let chosen = tape.pick(logp, step.action)?;
        let term = tape.scale(chosen, -advantage);
        policy = tape.add(policy, term)?;

        let ret = tape.constant(Tensor::scalar(ret));
        let diff = tape.sub(ret, step.value)?;
        let sq = tape.mul(diff, diff)?;
        let sq = tape.scale(sq, 0.5);
        value = tape.add(value, sq)?;

        let plogp = tape.mul(p, logp)?;
        let neg_h = tape.sum(plogp);
        let h = tape.scale(neg_h, -1.0);
        entropy = tape.add(entropy, h)?;
    }
    let bonus = tape.scale(entropy, -entropy_weight);
    let total = tape.add(policy, value)?;
    let total = tape.add(total, bonus)?;
    Ok(A3cLoss { total, policy, value, entropy })
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from the softmax of `logits`.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

//! Expert-labelled trajectory windows and supervised imitation training of
//! the representation extractor.

use std::collections::VecDeque;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::gridworld::{Action, Detection, Episode, Observation, Pose, Scene, N_CATEGORIES, PATCH_LEN};
use crate::policy::argmax;
use crate::tensor::{
    adam_step, clip_grad_norm, cross_entropy, AdamConfig, AdamState, Gradients, Graph, ParamId, ParamSet, Tensor,
    Var,
};
use crate::tsr::Linear;

pub const DATASET_MAGIC: &[u8; 9] = b"CRGTSR-DS";
pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_BATCH: usize = 64;
pub const LR_DECAY: f64 = 0.95;

/// Which policy drives the rollouts. Labels always come from the expert.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutPolicy {
    Expert,
    Random,
}

impl RolloutPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Self::Expert),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!("unknown dataset policy `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Expert => "expert",
            Self::Random => "random",
        }
    }
}

/// One training window.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    /// Index into the scene list the dataset was generated from.
    pub scene: u32,
    pub target: u8,
    /// Pose at the newest observation of the window.
    pub pose: Pose,
    /// `L` observations, oldest first, padded by repeating the first.
    pub window: Vec<Observation>,
    pub label: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub seq_len: usize,
    pub records: Vec<DatasetRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub episodes: usize,
    pub policy: RolloutPolicy,
    pub seed: u64,
    pub max_steps: u32,
    pub seq_len: usize,
}

fn padded_window(history: &VecDeque<Observation>, seq_len: usize) -> Vec<Observation> {
    let mut window: Vec<Observation> = history.iter().cloned().collect();
    while window.len() < seq_len {
        window.insert(0, window[0].clone());
    }
    window
}

/// Rolls out `spec.episodes` episodes over randomly drawn scenes and
/// targets, recording one window per visited pose, labelled with the
/// expert action at that pose.
pub fn generate_dataset(scenes: &[Arc<Scene>], spec: &DatasetSpec) -> Result<TrajectoryDataset> {
    if spec.episodes == 0 {
        return Err(Error::InvalidArgument("episode count must be positive".into()));
    }
    if scenes.is_empty() || spec.seq_len == 0 {
        return Err(Error::InvalidArgument("need scenes and a positive window length".into()));
    }
    let per_episode: Vec<Vec<DatasetRecord>> = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let scene_index = rng.random_range(0..scenes.len());
            let scene = &scenes[scene_index];
            let targets = scene.categories_present();
            let target = targets[rng.random_range(0..targets.len())];
            let mut ep = Episode::reset(Arc::clone(scene), target, rng.random::<u64>(), spec.max_steps)?;
            let mut history = VecDeque::from([ep.observation().clone()]);
            let mut records = Vec::new();
            while !ep.is_done() {
                let label = ep.expert_action()?;
                records.push(DatasetRecord {
                    scene: scene_index as u32,
                    target: target as u8,
                    pose: ep.state().pose,
                    window: padded_window(&history, spec.seq_len),
                    label,
                });
                let action = match spec.policy {
                    RolloutPolicy::Expert => label,
                    RolloutPolicy::Random => Action::ALL[rng.random_range(0..Action::COUNT)],
                };
                ep.step(action)?;
                history.push_back(ep.observation().clone());
                if history.len() > spec.seq_len {
                    history.pop_front();
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(TrajectoryDataset { seq_len: spec.seq_len, records: per_episode.into_iter().flatten().collect() })
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Label counts in [`Action::ALL`] order.
    pub fn label_histogram(&self) -> [usize; Action::COUNT] {
        let mut h = [0; Action::COUNT];
        for r in &self.records {
            h[r.label.index()] += 1;
        }
        h
    }

    /// Serializes to the fixed-width binary layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.seq_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.scene.to_le_bytes());
            out.push(r.target);
            out.extend_from_slice(&(r.pose.row as u16).to_le_bytes());
            out.extend_from_slice(&(r.pose.col as u16).to_le_bytes());
            out.extend_from_slice(&r.pose.rotation.to_le_bytes());
            out.extend_from_slice(&r.pose.horizon.to_le_bytes());
            for obs in &r.window {
                write_observation(&mut out, obs);
            }
            out.push(r.label.index() as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let err = |message: &str| Error::Dataset { path: origin.to_path_buf(), message: message.to_string() };
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(DATASET_MAGIC.len()).ok_or_else(|| err("truncated header"))? != DATASET_MAGIC {
            return Err(err("bad magic"));
        }
        let version = cur.u32().ok_or_else(|| err("truncated header"))?;
        if version != DATASET_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let seq_len = cur.u32().ok_or_else(|| err("truncated header"))? as usize;
        let count = cur.u64().ok_or_else(|| err("truncated header"))?;
        let expected = (count as usize).saturating_mul(record_width(seq_len));
        if bytes.len() - cur.pos != expected {
            return Err(err(&format!("expected {expected} record bytes, found {}", bytes.len() - cur.pos)));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let truncated = || err("truncated record");
            let scene = cur.u32().ok_or_else(truncated)?;
            let target = cur.u8().ok_or_else(truncated)?;
            let pose = Pose {
                row: cur.u16().ok_or_else(truncated)? as usize,
                col: cur.u16().ok_or_else(truncated)? as usize,
                rotation: cur.u16().ok_or_else(truncated)?,
                horizon: cur.u16().ok_or_else(truncated)? as i16,
            };
            let window = (0..seq_len).map(|_| read_observation(&mut cur).ok_or_else(truncated)).collect::<Result<_>>()?;
            let label = Action::from_index(cur.u8().ok_or_else(truncated)? as usize).ok_or_else(|| err("bad label"))?;
            records.push(DatasetRecord { scene, target, pose, window, label });
        }
        Ok(Self { seq_len, records })
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// present, bbox, confidence, depth, label, appearance
const SLOT_WIDTH: usize = 1 + 6 * 8 + 1 + 4;
const OBSERVATION_WIDTH: usize = 4 + N_CATEGORIES * SLOT_WIDTH + PATCH_LEN * 4;

fn record_width(seq_len: usize) -> usize {
    4 + 1 + 8 + seq_len * OBSERVATION_WIDTH + 1
}

fn write_observation(out: &mut Vec<u8>, obs: &Observation) {
    out.extend_from_slice(&obs.timestamp.to_le_bytes());
    for category in 0..N_CATEGORIES {
        match obs.detection(category) {
            Some(d) => {
                out.push(1);
                for v in d.bbox.iter().chain([&d.confidence, &d.depth]) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.push(d.label as u8);
                out.extend_from_slice(&(d.appearance as u32).to_le_bytes());
            }
            None => out.extend_from_slice(&[0; SLOT_WIDTH]),
        }
    }
    for &v in &obs.patch {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_observation(cur: &mut Cursor) -> Option<Observation> {
    let timestamp = cur.u32()?;
    let mut detections = Vec::new();
    for category in 0..N_CATEGORIES {
        let present = cur.u8()?;
        let mut vals = [0.0; 6];
        for v in &mut vals {
            *v = cur.f64()?;
        }
        let label = cur.u8()? as usize;
        let appearance = cur.u32()? as usize;
        if present == 1 {
            detections.push(Detection {
                category,
                bbox: [vals[0], vals[1], vals[2], vals[3]],
                confidence: vals[4],
                depth: vals[5],
                label,
                appearance,
            });
        }
    }
    let patch = (0..PATCH_LEN).map(|_| cur.f32().map(f64::from)).collect::<Option<_>>()?;
    Some(Observation { detections, patch, timestamp })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn array<const K: usize>(&mut self) -> Option<[u8; K]> {
        self.take(K).map(|s| s.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Option<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Option<f32> {
        self.array().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

/// MLP predicting the action directly from `[F ‖ target embedding]`.
#[derive(Clone, Copy, Debug)]
pub struct ImitationHead {
    pub target_embedding: ParamId,
    pub hidden: Linear,
    pub output: Linear,
    n_categories: usize,
}

impl ImitationHead {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Self {
        let target_embedding =
            params.register("head.target", Tensor::randn(&[config.n_categories, config.c_target], 1.0, rng));
        let input = config.c_global + config.c_target;
        let hidden = Linear::new(params, "head.hidden", input, config.d_hidden, true, rng);
        let output = Linear::new(params, "head.output", config.d_hidden, Action::COUNT, true, rng);
        // keeps the untrained loss at ln 6
        params.get_mut(output.weight).data_mut().iter_mut().for_each(|w| *w *= 0.01);
        Self { target_embedding, hidden, output, n_categories: config.n_categories }
    }

    pub fn forward(&self, g: &mut Graph, f: Var, target: usize) -> Result<Var> {
        if target >= self.n_categories {
            return Err(Error::TargetOutOfRange { target, classes: self.n_categories });
        }
        let table = g.p(self.target_embedding);
        let row = g.gather_rows(table, &[target])?;
        let x = g.concat(&[f, row], 1)?;
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}

/// Encoder plus the direct action head used during pre-training.
#[derive(Clone, Debug)]
pub struct ImitationModel {
    pub encoder: Encoder,
    pub head: ImitationHead,
}

impl ImitationModel {
    pub fn initialize(config: &ModelConfig, seed: u64) -> Result<(ParamSet, Self)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, config, &mut rng)?;
        let head = ImitationHead::new(&mut params, config, &mut rng);
        Ok((params, Self { encoder, head }))
    }

    pub fn logits(&self, g: &mut Graph, record: &DatasetRecord) -> Result<Var> {
        let window: Vec<&Observation> = record.window.iter().collect();
        let target = record.target as usize;
        let enc = self.encoder.encode(g, &window, target)?;
        self.head.forward(g, enc.f, target)
    }

    /// Cross-entropy of one record and its parameter gradients.
    pub fn loss_and_gradients(&self, params: &ParamSet, record: &DatasetRecord) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(params);
        let logits = self.logits(&mut g, record)?;
        let loss = cross_entropy(&mut g, logits, record.label.index())?;
        g.backward(loss)?;
        Ok((g.value(loss).item(), g.gradients()))
    }

    /// Greedy predictions and the mean cross-entropy over `records`.
    pub fn predict(&self, params: &ParamSet, records: &[DatasetRecord]) -> Result<(Vec<Action>, f64)> {
        let out: Vec<(Action, f64)> = records
            .par_iter()
            .map(|r| {
                let mut g = Graph::inference(params);
                let logits = self.logits(&mut g, r)?;
                let loss = cross_entropy(&mut g, logits, r.label.index())?;
                let action = Action::from_index(argmax(g.value(logits).data())).expect("six logits");
                Ok((action, g.value(loss).item()))
            })
            .collect::<Result<_>>()?;
        let loss = out.iter().map(|(_, l)| l).sum::<f64>() / out.len().max(1) as f64;
        Ok((out.into_iter().map(|(a, _)| a).collect(), loss))
    }
}

/// One shuffled pass over `data` in mini-batches of `batch_size`, one Adam
/// step per batch on the mean gradient (clipped at `clip`). Returns the
/// mean training loss.
pub fn imitation_epoch<R: Rng + ?Sized>(
    model: &ImitationModel,
    params: &mut ParamSet,
    adam: &mut AdamState,
    data: &TrajectoryDataset,
    batch_size: usize,
    clip: f64,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("empty dataset or zero batch size".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(batch_size) {
        let shared: &ParamSet = params;
        let parts: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|&i| model.loss_and_gradients(shared, &data.records[i]))
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(params);
        for (loss, g) in &parts {
            total += loss;
            grads.accumulate(g);
        }
        grads.scale(1.0 / batch.len() as f64);
        clip_grad_norm(&mut grads, clip);
        adam_step(params, &mut grads, adam)?;
    }
    Ok(total / data.len() as f64)
}

/// Imitation training state with the per-epoch learning-rate decay.
#[derive(Clone, Debug)]
pub struct ImitationTrainer {
    pub model: ImitationModel,
    pub params: ParamSet,
    pub adam: AdamState,
    pub base_lr: f64,
    pub batch_size: usize,
    pub clip: f64,
    pub epochs_done: usize,
    rng: ChaCha8Rng,
}

impl ImitationTrainer {
    pub fn new(config: &ModelConfig, seed: u64, base_lr: f64) -> Result<Self> {
        let (params, model) = ImitationModel::initialize(config, seed)?;
        let adam = AdamState::new(&params, AdamConfig::with_lr(base_lr));
        Ok(Self {
            model,
            params,
            adam,
            base_lr,
            batch_size: DEFAULT_BATCH,
            clip: 40.0,
            epochs_done: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        })
    }

    /// Learning rate used by the next epoch: `base · 0.95^epoch`.
    pub fn current_lr(&self) -> f64 {
        self.base_lr * LR_DECAY.powi(self.epochs_done as i32)
    }

    pub fn epoch(&mut self, data: &TrajectoryDataset) -> Result<f64> {
        self.adam.config.lr = self.current_lr();
        let loss =
            imitation_epoch(&self.model, &mut self.params, &mut self.adam, data, self.batch_size, self.clip, &mut self.rng)?;
        self.epochs_done += 1;
        Ok(loss)
    }

    /// Top-1 accuracy and mean loss on `data`.
    pub fn evaluate(&self, data: &TrajectoryDataset) -> Result<(f64, f64)> {
        let (pred, loss) = self.model.predict(&self.params, &data.records)?;
        let labels: Vec<Action> = data.records.iter().map(|r| r.label).collect();
        Ok((accuracy(&pred, &labels), loss))
    }
}

/// Fraction of positions where `predicted` equals `labels`.
pub fn accuracy(predicted: &[Action], labels: &[Action]) -> f64 {
    assert_eq!(predicted.len(), labels.len(), "prediction and label counts differ");
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// `m[label][predicted]` counts.
pub fn confusion_matrix(predicted: &[Action], labels: &[Action]) -> [[usize; Action::COUNT]; Action::COUNT] {
    let mut m = [[0; Action::COUNT]; Action::COUNT];
    for (p, l) in predicted.iter().zip(labels) {
        m[l.index()][p.index()] += 1;
    }
    m
}

/// Whether a parameter belongs to the shared representation extractor.
pub fn is_shared_parameter(name: &str) -> bool {
    name.starts_with("crg.") || name.starts_with("tsr.")
}

/// Copies every relation-graph and attention-stack tensor of `source` into
/// `dest`; all other tensors of `dest` stay untouched. Nothing is written
/// unless every shared tensor exists in `dest` with the same shape. Returns
/// the copied names.
pub fn transfer_weights(source: &ParamSet, dest: &mut ParamSet) -> Result<Vec<String>> {
    let mut plan = Vec::new();
    for (_, name, tensor) in source.iter().filter(|(_, n, _)| is_shared_parameter(n)) {
        let id = dest.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let found = dest.get(id).shape();
        if found != tensor.shape() {
            return Err(Error::ParameterShape {
                name: name.to_string(),
                expected: tensor.shape().to_vec(),
                found: found.to_vec(),
            });
        }
        plan.push((id, name.to_string(), tensor.clone()));
    }
    let mut names = Vec::with_capacity(plan.len());
    for (id, name, tensor) in plan {
        dest.set(id, tensor)?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_scene, SceneSpec};

    fn scenes() -> Vec<Arc<Scene>> {
        let spec = SceneSpec { rows: 6, cols: 6, obstacle_density: 0.1, object_count: 4 };
        (0..3).map(|s| Arc::new(generate_scene(s, &spec).unwrap())).collect()
    }

    fn spec(policy: RolloutPolicy) -> DatasetSpec {
        DatasetSpec { episodes: 6, policy, seed: 11, max_steps: 30, seq_len: 4 }
    }

    #[test]
    fn dataset_is_seeded_and_labels_sound() {
        let scenes = scenes();
        let a = generate_dataset(&scenes, &spec(RolloutPolicy::Random)).unwrap();
        assert_eq!(a, generate_dataset(&scenes, &spec(RolloutPolicy::Random)).unwrap());
        for r in &a.records {
            let scene = &scenes[r.scene as usize];
            let expert = crate::gridworld::expert_action(scene, &r.pose, r.target as usize).unwrap();
            assert_eq!(expert, r.label);
            assert_eq!(r.window.len(), 4);
        }
    }

    #[test]
    fn binary_round_trip() {
        let data = generate_dataset(&scenes(), &spec(RolloutPolicy::Expert)).unwrap();
        let bytes = data.to_bytes();
        let back = TrajectoryDataset::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, data);
        assert!(TrajectoryDataset::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TrajectoryDataset::from_bytes(&bad, Path::new("mem")).is_err());
    }

    #[test]
    fn zero_episodes_rejected() {
        let s = DatasetSpec { episodes: 0, ..spec(RolloutPolicy::Expert) };
        assert!(generate_dataset(&scenes(), &s).is_err());
    }

    #[test]
    fn lr_decays_per_epoch() {
        let mut t = ImitationTrainer::new(&ModelConfig::small(), 0, 1e-3).unwrap();
        t.epochs_done = 2;
        assert!((t.current_lr() - 1e-3 * 0.9025).abs() < 1e-15);
    }
}

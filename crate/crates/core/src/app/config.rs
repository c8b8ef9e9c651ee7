use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gridworld::{generate_scene, Scene, SceneSpec};
use crate::policy::{TrainConfig, DEFAULT_ENTROPY_WEIGHT, DEFAULT_GAMMA, DEFAULT_HORIZON};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "CRGTSR_SEED";

const EVAL_SCENE_OFFSET: u64 = 1 << 32;

/// Everything a command needs besides its flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub model: ModelConfig,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub horizon: usize,
    pub rl_lr: f64,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_episodes: usize,
    pub grad_clip: f64,
    pub workers: usize,
    pub episodes: u64,
    pub max_steps: u32,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSpec::default(),
            train_scenes: 20,
            eval_scenes: 10,
            model: ModelConfig::default(),
            gamma: DEFAULT_GAMMA,
            entropy_weight: DEFAULT_ENTROPY_WEIGHT,
            horizon: DEFAULT_HORIZON,
            rl_lr: 1e-4,
            pretrain_lr: 1e-5,
            pretrain_epochs: 20,
            pretrain_batch: 64,
            pretrain_episodes: 500,
            grad_clip: 40.0,
            workers: 2,
            episodes: 20_000,
            max_steps: 50,
            checkpoint_every: 1000,
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value `{value}`: {e}"))
}

impl RunConfig {
    /// Key/value pairs in canonical order.
    fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        vec![
            ("seed", self.seed.to_string()),
            ("rows", self.scene.rows.to_string()),
            ("cols", self.scene.cols.to_string()),
            ("obstacle_density", self.scene.obstacle_density.to_string()),
            ("object_count", self.scene.object_count.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("eval_scenes", self.eval_scenes.to_string()),
            ("n_categories", m.n_categories.to_string()),
            ("seq_len", m.seq_len.to_string()),
            ("heads", m.heads.to_string()),
            ("layers", m.layers.to_string()),
            ("c_dict", m.c_dict.to_string()),
            ("c_appearance", m.c_appearance.to_string()),
            ("c_feature", m.c_feature.to_string()),
            ("c_global", m.c_global.to_string()),
            ("d_hidden", m.d_hidden.to_string()),
            ("c_target", m.c_target.to_string()),
            ("gamma", self.gamma.to_string()),
            ("entropy_weight", self.entropy_weight.to_string()),
            ("horizon", self.horizon.to_string()),
            ("rl_lr", self.rl_lr.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_batch", self.pretrain_batch.to_string()),
            ("pretrain_episodes", self.pretrain_episodes.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("workers", self.workers.to_string()),
            ("episodes", self.episodes.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse_value(value)?,
            "rows" => self.scene.rows = parse_value(value)?,
            "cols" => self.scene.cols = parse_value(value)?,
            "obstacle_density" => self.scene.obstacle_density = parse_value(value)?,
            "object_count" => self.scene.object_count = parse_value(value)?,
            "train_scenes" => self.train_scenes = parse_value(value)?,
            "eval_scenes" => self.eval_scenes = parse_value(value)?,
            "n_categories" => m.n_categories = parse_value(value)?,
            "seq_len" => m.seq_len = parse_value(value)?,
            "heads" => m.heads = parse_value(value)?,
            "layers" => m.layers = parse_value(value)?,
            "c_dict" => m.c_dict = parse_value(value)?,
            "c_appearance" => m.c_appearance = parse_value(value)?,
            "c_feature" => m.c_feature = parse_value(value)?,
            "c_global" => m.c_global = parse_value(value)?,
            "d_hidden" => m.d_hidden = parse_value(value)?,
            "c_target" => m.c_target = parse_value(value)?,
            "gamma" => self.gamma = parse_value(value)?,
            "entropy_weight" => self.entropy_weight = parse_value(value)?,
            "horizon" => self.horizon = parse_value(value)?,
            "rl_lr" => self.rl_lr = parse_value(value)?,
            "pretrain_lr" => self.pretrain_lr = parse_value(value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(value)?,
            "pretrain_batch" => self.pretrain_batch = parse_value(value)?,
            "pretrain_episodes" => self.pretrain_episodes = parse_value(value)?,
            "grad_clip" => self.grad_clip = parse_value(value)?,
            "workers" => self.workers = parse_value(value)?,
            "episodes" => self.episodes = parse_value(value)?,
            "max_steps" => self.max_steps = parse_value(value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| Error::Parse { path: origin.to_string(), line: i + 1, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            config.set(key, value).map_err(err)?;
        }
        config.validate().map_err(|e| Error::Config { path: origin.into(), message: e.to_string() })?;
        Ok(config)
    }

    /// Reads `path` and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let mut config = Self::from_text(&text, &path.display().to_string())?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.seed = seed.trim().parse().map_err(|e| Error::Config {
                path: path.to_path_buf(),
                message: format!("{SEED_ENV}=`{seed}`: {e}"),
            })?;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("rows", self.scene.rows),
            ("cols", self.scene.cols),
            ("object_count", self.scene.object_count),
            ("train_scenes", self.train_scenes),
            ("eval_scenes", self.eval_scenes),
            ("horizon", self.horizon),
            ("pretrain_batch", self.pretrain_batch),
            ("workers", self.workers),
            ("max_steps", self.max_steps as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.scene.obstacle_density) {
            return Err(Error::InvalidArgument(format!("obstacle_density {} outside [0, 1)", self.scene.obstacle_density)));
        }
        for (name, v) in [("rl_lr", self.rl_lr), ("pretrain_lr", self.pretrain_lr), ("grad_clip", self.grad_clip)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(Error::InvalidArgument("entropy_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Hash of the architecture keys; checkpoints are compatible exactly
    /// when their hashes agree.
    pub fn model_hash(&self) -> u64 {
        let m = &self.model;
        let text = format!(
            "n_categories={} seq_len={} heads={} layers={} c_dict={} c_appearance={} c_feature={} c_global={} d_hidden={} c_target={}",
            m.n_categories, m.seq_len, m.heads, m.layers, m.c_dict, m.c_appearance, m.c_feature, m.c_global, m.d_hidden, m.c_target
        );
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            workers: self.workers,
            episodes: self.episodes,
            max_steps: self.max_steps,
            gamma: self.gamma,
            entropy_weight: self.entropy_weight,
            horizon: self.horizon,
        }
    }

    /// Seeds of the training scenes.
    pub fn train_scene_seeds(&self) -> Vec<u64> {
        (0..self.train_scenes as u64).map(|i| self.seed.wrapping_mul(1 << 16).wrapping_add(i)).collect()
    }

    /// Seeds of the held-out scenes; disjoint from the training seeds.
    pub fn eval_scene_seeds(&self) -> Vec<u64> {
        (0..self.eval_scenes as u64)
            .map(|i| self.seed.wrapping_mul(1 << 16).wrapping_add(EVAL_SCENE_OFFSET + i))
            .collect()
    }

    pub fn generate_scenes(&self, seeds: &[u64]) -> Result<Vec<Arc<Scene>>> {
        seeds.iter().map(|&s| generate_scene(s, &self.scene).map(Arc::new)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig { seed: 42, rl_lr: 3.5e-4, ..RunConfig::default() };
        c.scene.obstacle_density = 0.15;
        let back = RunConfig::from_text(&c.to_text(), "t").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::from_text("# header\n\nseed = 9  # trailing\nworkers=1\n", "t").unwrap();
        assert_eq!((c.seed, c.workers), (9, 1));
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::from_text("seed = 1\nbogus = 3\n", "cfg.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(e.to_string().contains("cfg.txt:2"));
        let e = RunConfig::from_text("seed = 1\nseed = 2\n", "c").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = RunConfig::from_text("\n\nheads = x\n", "c").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(RunConfig::from_text("no equals sign\n", "c").is_err());
        assert!(matches!(RunConfig::from_text("heads = 3\n", "c"), Err(Error::Config { .. })));
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 5, episodes: 7, ..a.clone() };
        assert_eq!(a.model_hash(), b.model_hash());
        let c = RunConfig { model: ModelConfig { c_feature: 32, ..a.model }, ..a.clone() };
        assert_ne!(a.model_hash(), c.model_hash());
    }

    #[test]
    fn scene_seed_sets_are_disjoint() {
        let c = RunConfig::default();
        let train = c.train_scene_seeds();
        assert!(c.eval_scene_seeds().iter().all(|s| !train.contains(s)));
    }
}

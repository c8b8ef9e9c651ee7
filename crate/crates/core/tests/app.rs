use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crgtsr::app::*;
use crgtsr::eval_metrics::{parse_results_csv, spl, success_rate, Metric, Split};
use crgtsr::pretrain::RolloutPolicy;
use crgtsr::tensor::AdamConfig;
use crgtsr::Error;
use proptest::prelude::*;
use tempfile::TempDir;

const SMALL: &str = "\
# tiny run used by the tests
seed = 3
rows = 5
cols = 5
obstacle_density = 0.1
object_count = 4
train_scenes = 3
eval_scenes = 2
c_dict = 4
c_appearance = 4
c_feature = 8
c_global = 8
d_hidden = 8
c_target = 4
layers = 1
heads = 2
pretrain_lr = 0.003
pretrain_episodes = 8
pretrain_epochs = 2
pretrain_batch = 16
rl_lr = 0.001
workers = 1
episodes = 12
max_steps = 20
checkpoint_every = 5
";

fn setup(text: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, text).unwrap();
    (dir, path)
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crgtsr")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn config_file_parses_with_defaults_for_missing_keys() {
    let config = RunConfig::from_text(SMALL, "small").unwrap();
    assert_eq!(config.scene.rows, 5);
    assert_eq!(config.model.c_feature, 8);
    assert_eq!(config.gamma, RunConfig::default().gamma);
    assert_eq!(RunConfig::from_text(&config.to_text(), "again").unwrap(), config);
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = bin(&["train", "--config", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.cfg"));
}

#[test]
fn zero_episodes_is_a_validation_error() {
    let (dir, cfg) = setup(SMALL);
    let out = bin(&["train", "--config", s(&cfg), "--out-dir", s(dir.path()), "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join(TRAIN_CHECKPOINT).exists());
}

#[test]
fn malformed_config_reports_the_line() {
    let (dir, cfg) = setup("seed = 1\nrows = many\n");
    let out = bin(&["gen-scenes", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.cfg:2"));
}

#[test]
fn seed_environment_variable_overrides_the_file() {
    let (dir, cfg) = setup(SMALL);
    let read = |sub: &str, env: Option<&str>| {
        let out_dir = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_crgtsr"));
        cmd.args(["gen-scenes", "--config", s(&cfg), "--out-dir", s(&out_dir)]);
        if let Some(v) = env {
            cmd.env(SEED_ENV, v);
        }
        assert!(cmd.output().unwrap().status.success());
        load_scene_dir(&out_dir.join("scenes/train")).unwrap()
    };
    let plain = read("a", None);
    assert_eq!(plain, read("b", Some("3")));
    assert_ne!(plain, read("c", Some("4")));
}

#[test]
fn generated_scene_files_match_the_config() {
    let (dir, cfg) = setup(SMALL);
    let n = cmd_gen_scenes(&GenScenesArgs { config: cfg.clone(), out_dir: dir.path().into() }).unwrap();
    assert_eq!(n, 5);
    let config = RunConfig::load(&cfg).unwrap();
    let loaded = load_scene_dir(&dir.path().join("scenes/eval")).unwrap();
    assert_eq!(loaded, config.generate_scenes(&config.eval_scene_seeds()).unwrap());
}

#[test]
fn expert_pseudo_checkpoint_scores_perfectly() {
    let (dir, cfg) = setup(SMALL);
    let args = EvalArgs {
        config: cfg,
        out_dir: dir.path().into(),
        checkpoint: None,
        expert: true,
        scenes: None,
        runs: 3,
        episodes_per_scene: 4,
    };
    let report = cmd_eval(&args).unwrap();
    let all = report.row(Split::All, Metric::Sr);
    assert_eq!((all.mean, all.variance, all.n_runs, all.n_episodes), (Some(1.0), Some(0.0), 3, 24));
    assert_eq!(report.row(Split::All, Metric::Spl).mean, Some(1.0));

    // The report file agrees with the raw per-episode file.
    let results = parse_results_csv(&fs::read_to_string(dir.path().join(EVAL_RESULTS)).unwrap()).unwrap();
    assert_eq!(results.len(), 24);
    assert_eq!(success_rate(&results).unwrap(), 1.0);
    assert_eq!(spl(&results).unwrap(), 1.0);
    assert_eq!(fs::read_to_string(dir.path().join(EVAL_REPORT)).unwrap(), report.to_csv());
}

#[test]
fn single_run_eval_has_no_variance() {
    let (dir, cfg) = setup(SMALL);
    let out = bin(&["eval", "--config", s(&cfg), "--out-dir", s(dir.path()), "--expert", "--runs", "1"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("variance omitted"));
    let report = fs::read_to_string(dir.path().join(EVAL_REPORT)).unwrap();
    assert!(report.lines().any(|l| l.starts_with("ALL,SR,1,,1,")), "{report}");
}

#[test]
fn eval_requires_exactly_one_policy() {
    let (dir, cfg) = setup(SMALL);
    let args =
        EvalArgs { config: cfg, out_dir: dir.path().into(), checkpoint: None, expert: false, scenes: None, runs: 1, episodes_per_scene: 1 };
    assert!(matches!(cmd_eval(&args), Err(Error::InvalidArgument(_))));
}

#[test]
fn pretrain_train_resume_eval_pipeline() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().to_path_buf();
    let pre = cmd_pretrain(&PretrainArgs {
        config: cfg.clone(),
        out_dir: out.join("pre"),
        dataset_policy: RolloutPolicy::Expert,
        episodes: None,
        epochs: None,
    })
    .unwrap();
    assert_eq!(pre.accuracy.len(), 2);
    assert!(pre.train_windows > 0 && pre.validation_windows > 0);
    let log = fs::read_to_string(out.join("pre").join(PRETRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 3);
    let ckpt = Checkpoint::load(&pre.checkpoint).unwrap();
    assert_eq!(ckpt.version, 2);
    assert!(ckpt.adam.is_some());

    // The same config reuses the cached dataset and reproduces the run.
    let again = cmd_pretrain(&PretrainArgs {
        config: cfg.clone(),
        out_dir: out.join("pre"),
        dataset_policy: RolloutPolicy::Expert,
        episodes: None,
        epochs: None,
    })
    .unwrap();
    assert_eq!(again, pre);

    let first = cmd_train(&TrainArgs {
        config: cfg.clone(),
        out_dir: out.join("rl"),
        init: Some(pre.checkpoint.clone()),
        workers: None,
        episodes: None,
    })
    .unwrap();
    assert_eq!(first.episodes, 12);
    assert!(first.version > 0);
    let stats = fs::read_to_string(out.join("rl").join(TRAIN_STATS)).unwrap();
    assert_eq!(stats.lines().count(), 13);

    let resumed = cmd_train(&TrainArgs {
        config: cfg.clone(),
        out_dir: out.join("rl2"),
        init: Some(first.checkpoint.clone()),
        workers: None,
        episodes: Some(4),
    })
    .unwrap();
    assert!(resumed.version > first.version, "{} <= {}", resumed.version, first.version);

    let report = cmd_eval(&EvalArgs {
        config: cfg,
        out_dir: out.join("eval"),
        checkpoint: Some(resumed.checkpoint),
        expert: false,
        scenes: None,
        runs: 2,
        episodes_per_scene: 2,
    })
    .unwrap();
    assert_eq!(report.row(Split::All, Metric::Sr).n_episodes, 8);
}

#[test]
fn single_worker_training_is_reproducible() {
    let (dir, cfg) = setup(SMALL);
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        cmd_train(&TrainArgs { config: cfg.clone(), out_dir: out_dir.clone(), init: None, workers: Some(1), episodes: None })
            .unwrap();
        (fs::read(out_dir.join(TRAIN_STATS)).unwrap(), fs::read(out_dir.join(TRAIN_CHECKPOINT)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn incompatible_checkpoint_names_both_hashes() {
    let (dir, cfg) = setup(SMALL);
    let other = RunConfig { model: crgtsr::ModelConfig::small(), ..RunConfig::from_text(SMALL, "x").unwrap() };
    let (_, store) = build_store(&other, None).unwrap();
    let path = dir.path().join("other.ckpt");
    save_checkpoint(&path, &store, other.model_hash()).unwrap();

    let config = RunConfig::load(&cfg).unwrap();
    let err = build_store(&config, Some(&path)).unwrap_err();
    let text = err.to_string();
    assert!(text.contains(&format!("{:016x}", other.model_hash())), "{text}");
    assert!(text.contains(&format!("{:016x}", config.model_hash())), "{text}");

    let out = bin(&["train", "--config", s(&cfg), "--out-dir", s(dir.path()), "--init", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("{:016x}", other.model_hash())));
}

#[test]
fn truncated_checkpoint_leaves_the_store_untouched() {
    let (dir, cfg) = setup(SMALL);
    let config = RunConfig::load(&cfg).unwrap();
    let hash = config.model_hash();
    let (_, donor) = build_store(&config, None).unwrap();
    let path = dir.path().join("full.ckpt");
    save_checkpoint(&path, &donor, hash).unwrap();
    let bytes = fs::read(&path).unwrap();

    let (_, target) = build_store(&RunConfig { seed: 99, ..config }, None).unwrap();
    let before = Checkpoint::from_store(&target, hash).to_bytes();
    for cut in [0, 5, CHECKPOINT_MAGIC.len() + 9, bytes.len() / 3, bytes.len() / 2, bytes.len() - 1] {
        let broken = dir.path().join(format!("cut{cut}.ckpt"));
        fs::write(&broken, &bytes[..cut]).unwrap();
        let err = load_checkpoint(&broken, &target, hash).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "{cut}: {err}");
        assert!(err.to_string().contains(&format!("cut{cut}.ckpt")));
        assert_eq!(Checkpoint::from_store(&target, hash).to_bytes(), before, "store changed after cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra, &path).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bad_magic, &path).is_err());

    load_checkpoint(&path, &target, hash).unwrap();
    assert_eq!(Checkpoint::from_store(&target, hash).to_bytes(), bytes);
}

#[test]
fn checkpoint_keeps_optimizer_state() {
    let config = RunConfig::from_text(SMALL, "small").unwrap();
    let (_, store) = build_store(&config, None).unwrap();
    let ckpt = Checkpoint::from_store(&store, 1);
    let adam = ckpt.adam.as_ref().unwrap();
    assert_eq!(adam.config.lr, AdamConfig::with_lr(config.rl_lr).lr);
    let back = Checkpoint::from_bytes(&ckpt.to_bytes(), Path::new("mem")).unwrap();
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (any::<u32>(), 5usize..20, 0.0f64..0.3, 4usize..10, 1usize..5, 1u64..100_000, 1e-6f64..1e-2, 0.5f64..1.0).prop_map(
        |(seed, side, density, objects, workers, episodes, lr, gamma)| {
            let mut c = RunConfig { seed: seed as u64, workers, episodes, rl_lr: lr, gamma, ..RunConfig::default() };
            c.scene.rows = side;
            c.scene.cols = side + 1;
            c.scene.obstacle_density = density;
            c.scene.object_count = objects;
            c
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(config in arb_config()) {
        let back = RunConfig::from_text(&config.to_text(), "prop").unwrap();
        prop_assert_eq!(back.model_hash(), config.model_hash());
        prop_assert_eq!(back, config);
    }
}

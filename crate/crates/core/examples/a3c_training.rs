//! Trains the navigation policy with A3C on small scenes, starting either
//! from scratch or from imitation pre-trained representation weights.
//!
//! ```text
//! cargo run --release --example a3c_training -- [pretrain|scratch] [episodes] [workers]
//! ```

use std::ops::ControlFlow;
use std::sync::Arc;

use crgtsr::eval_metrics::{run_eval, spl, success_rate, EvalConfig, PolicyAgent, RandomAgent};
use crgtsr::gridworld::{generate_scene, Scene, SceneSpec};
use crgtsr::policy::{run_workers, NavigationModel, ParameterStore, TrainConfig, WorkerContext};
use crgtsr::pretrain::{generate_dataset, transfer_weights, DatasetSpec, ImitationTrainer, RolloutPolicy};
use crgtsr::tensor::AdamConfig;
use crgtsr::ModelConfig;

fn main() -> crgtsr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pretrain = args.get(1).is_none_or(|a| a == "pretrain");
    let episodes: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let workers: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let spec = SceneSpec { rows: 5, cols: 5, obstacle_density: 0.1, object_count: 4 };
    let scenes: Vec<Arc<Scene>> =
        (100..120).map(|s| generate_scene(s, &spec).map(Arc::new)).collect::<Result<_, _>>()?;
    let config = ModelConfig::small();
    let (mut params, model) = NavigationModel::initialize(&config, 1)?;

    if pretrain {
        let data = generate_dataset(
            &scenes,
            &DatasetSpec { episodes: 600, policy: RolloutPolicy::Expert, seed: 1, max_steps: 50, seq_len: config.seq_len },
        )?;
        let mut trainer = ImitationTrainer::new(&config, 1, 3e-3)?;
        for epoch in 1..=10 {
            let loss = trainer.epoch(&data)?;
            println!("pre-training epoch {epoch}: loss {loss:.3}");
        }
        let copied = transfer_weights(&trainer.params, &mut params)?;
        println!("copied {} representation tensors", copied.len());
    }

    let eval = EvalConfig { episodes_per_scene: 10, seed: 7, max_steps: 50, run: 0 };
    let random = run_eval(RandomAgent::default, &scenes, &eval)?;
    println!("random agent SR {:.3}", success_rate(&random)?);

    let store = Arc::new(ParameterStore::with_adam(params, AdamConfig::with_lr(1e-3), 40.0));
    let train = TrainConfig { seed: 1, workers, episodes, ..TrainConfig::default() };
    let ctx = WorkerContext::new(model.clone(), scenes.clone(), Arc::clone(&store), train)?;
    let mut window = Vec::new();
    run_workers(&ctx, |s| {
        window.push(s.success);
        if window.len() == 250 {
            let snapshot = store.snapshot();
            let train_sr = window.iter().filter(|&&x| x).count() as f64 / 250.0;
            window.clear();
            match run_eval(|| PolicyAgent::new(model.clone(), Arc::clone(&snapshot.params)), &scenes, &eval) {
                Ok(r) => println!(
                    "episode {:>5}: training SR {train_sr:.3}, greedy SR {:.3}, SPL {:.3}",
                    s.episode + 1,
                    success_rate(&r).unwrap_or(0.0),
                    spl(&r).unwrap_or(0.0)
                ),
                Err(e) => eprintln!("evaluation failed: {e}"),
            }
        }
        ControlFlow::Continue(())
    })?;
    println!("store version {}", store.version());
    Ok(())
}

//! Collects expert windows and pre-trains the encoder with an imitation
//! head, reporting held-out accuracy against the majority-label baseline.
//!
//! ```text
//! cargo run --release --example imitation_pretraining -- [epochs]
//! ```

use std::sync::Arc;

use crgtsr::gridworld::{generate_scene, Action, Scene, SceneSpec};
use crgtsr::pretrain::{generate_dataset, DatasetSpec, ImitationTrainer, RolloutPolicy};
use crgtsr::ModelConfig;

fn main() -> crgtsr::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let config = ModelConfig::small();
    let scenes: Vec<Arc<Scene>> =
        (1000..1040).map(|s| generate_scene(s, &SceneSpec::default()).map(Arc::new)).collect::<Result<_, _>>()?;

    let spec = |episodes, seed| DatasetSpec {
        episodes,
        policy: RolloutPolicy::Expert,
        seed,
        max_steps: 50,
        seq_len: config.seq_len,
    };
    let train = generate_dataset(&scenes, &spec(300, 1))?;
    let held_out = generate_dataset(&scenes, &spec(80, 2))?;
    let hist = train.label_histogram();
    let majority = (0..Action::COUNT).max_by_key(|&i| hist[i]).unwrap_or(0);
    let baseline =
        held_out.records.iter().filter(|r| r.label.index() == majority).count() as f64 / held_out.len() as f64;
    println!("{} training windows, {} held out, label histogram {hist:?}", train.len(), held_out.len());
    println!("majority baseline {baseline:.3}");

    let mut trainer = ImitationTrainer::new(&config, 0, 3e-3)?;
    for epoch in 1..=epochs {
        let loss = trainer.epoch(&train)?;
        let (acc, held_loss) = trainer.evaluate(&held_out)?;
        println!("epoch {epoch}: train loss {loss:.3}, held-out loss {held_loss:.3}, accuracy {acc:.3}");
    }
    Ok(())
}

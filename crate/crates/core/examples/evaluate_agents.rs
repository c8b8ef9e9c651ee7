//! Evaluates the random and expert agents over several seeded runs and
//! prints the ALL / L≥5 report for each.

use std::sync::Arc;

use crgtsr::eval_metrics::{run_eval, split_report, EvalConfig, ExpertAgent, RandomAgent};
use crgtsr::gridworld::{generate_scene, Scene, SceneSpec};

fn main() -> crgtsr::Result<()> {
    let scenes: Vec<Arc<Scene>> =
        (500..510).map(|s| generate_scene(s, &SceneSpec::default()).map(Arc::new)).collect::<Result<_, _>>()?;
    let mut random = Vec::new();
    let mut expert = Vec::new();
    for run in 0..5 {
        let config = EvalConfig { episodes_per_scene: 10, seed: 100 + run as u64, max_steps: 50, run };
        random.extend(run_eval(RandomAgent::default, &scenes, &config)?);
        expert.extend(run_eval(|| ExpertAgent, &scenes, &config)?);
    }
    println!("random agent\n{}", split_report(&random)?);
    println!("expert agent\n{}", split_report(&expert)?);
    Ok(())
}

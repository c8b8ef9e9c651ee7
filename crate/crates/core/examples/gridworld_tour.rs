//! Generates a scene, prints it, and walks the shortest-path expert to a
//! target while printing what the agent sees.
//!
//! ```text
//! cargo run --example gridworld_tour -- [scene-seed]
//! ```

use std::sync::Arc;

use crgtsr::gridworld::{generate_scene, Episode, SceneSpec};

fn main() -> crgtsr::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let scene = Arc::new(generate_scene(seed, &SceneSpec::default())?);
    println!("{}", scene.to_text());

    let target = scene.categories_present()[0];
    let mut ep = Episode::reset(Arc::clone(&scene), target, seed, 50)?;
    println!("target category {target}, shortest path {} actions", ep.optimal_length());
    while !ep.is_done() {
        let pose = ep.state().pose;
        let seen: Vec<usize> = ep.observation().detections.iter().map(|d| d.category).collect();
        let action = ep.expert_action()?;
        let out = ep.step(action)?;
        println!(
            "({:>2},{:>2}) rot {:>3} pitch {:>3}  sees {:?}  -> {:?} (reward {:+.2})",
            pose.row, pose.col, pose.rotation, pose.horizon, seen, action, out.reward
        );
    }
    println!("success {} after {} steps, return {:.2}", ep.is_success(), ep.steps_taken(), ep.total_reward());
    Ok(())
}

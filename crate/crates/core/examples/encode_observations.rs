//! Runs the relation graph and attention stack on a short observation
//! window and prints the shapes and a few values of every intermediate.

use std::sync::Arc;

use crgtsr::encoder::Encoder;
use crgtsr::gridworld::{generate_scene, Action, Episode, Observation, SceneSpec};
use crgtsr::tensor::{Graph, ParamSet};
use crgtsr::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> crgtsr::Result<()> {
    let config = ModelConfig::small();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let encoder = Encoder::new(&mut params, &config, &mut rng)?;
    println!("{} parameter tensors, {} scalars", params.len(), params.iter().map(|(_, _, t)| t.len()).sum::<usize>());

    let scene = Arc::new(generate_scene(3, &SceneSpec::default())?);
    let target = scene.categories_present()[0];
    let mut ep = Episode::reset(scene, target, 3, 50)?;
    let mut window: Vec<Observation> = vec![ep.observation().clone()];
    while window.len() < config.seq_len {
        let action = ep.expert_action()?;
        if action == Action::Done {
            break;
        }
        ep.step(action)?;
        window.push(ep.observation().clone());
    }
    let refs: Vec<&Observation> = window.iter().collect();

    let mut g = Graph::inference(&params);
    let enc = encoder.encode(&mut g, &refs, target)?;
    let show = |name: &str, v| {
        let t = g.value(v);
        println!("{name:<12} {:?}", t.shape());
    };
    show("adjacency", enc.adjacency);
    show("node x", enc.nodes.x);
    show("temporal", enc.temporal);
    show("spatial", enc.spatial);
    show("fused", enc.fused);
    show("global", enc.global);
    show("F", enc.f);
    println!("{} attention maps", enc.probs.len());

    let a = g.value(enc.adjacency);
    let row: Vec<String> = a.row_slice(target).iter().take(8).map(|v| format!("{v:.3}")).collect();
    println!("relation row of the target (first 8): {}", row.join(" "));
    let detected: Vec<usize> = window.last().unwrap().detected_categories();
    println!("newest frame detects {detected:?}");
    Ok(())
}

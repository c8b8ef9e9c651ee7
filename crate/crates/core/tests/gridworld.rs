mod common;

use std::sync::Arc;

use common::{bfs_path_length, oracle_transition, sampled_line_blocked, scenes};
use crgtsr::gridworld::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn optimal_length_matches_forward_bfs() {
    let spec = SceneSpec { rows: 8, cols: 8, obstacle_density: 0.15, object_count: 5 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scene in scenes(&spec, 0..100) {
        let target = scene.categories_present()[0];
        let field = DistanceField::compute(&scene, target).unwrap();
        for _ in 0..3 {
            let cells = scene.walkable_cells();
            let (row, col) = cells[rng.random_range(0..cells.len())];
            let pose = Pose { row, col, rotation: rng.random_range(0..8) * 45, horizon: 0 };
            let expected = bfs_path_length(&scene, pose, target);
            assert_eq!(field.optimal_path_length(&pose).ok(), expected, "{pose:?}");
        }
    }
}

#[test]
fn expert_rollouts_take_exactly_the_optimal_length() {
    let spec = SceneSpec::default();
    for (i, scene) in scenes(&spec, 200..240).into_iter().enumerate() {
        for target in scene.categories_present() {
            let mut ep = Episode::reset(Arc::clone(&scene), target, i as u64, 200).unwrap();
            let optimal = ep.optimal_length();
            while !ep.is_done() {
                let a = ep.expert_action().unwrap();
                ep.step(a).unwrap();
            }
            assert!(ep.is_success());
            assert_eq!(ep.steps_taken(), optimal);
        }
    }
}

#[test]
fn reward_accounting() {
    let scene = Arc::new(generate_scene(3, &SceneSpec::default()).unwrap());
    let target = scene.categories_present()[0];
    let mut ep = Episode::reset(Arc::clone(&scene), target, 9, 200).unwrap();
    let mut sum = 0.0;
    while !ep.is_done() {
        let a = ep.expert_action().unwrap();
        sum += ep.step(a).unwrap().reward;
    }
    let n = ep.steps_taken() as f64;
    assert!((ep.total_reward() - sum).abs() < 1e-12);
    assert!((sum - (n * STEP_PENALTY + SUCCESS_REWARD)).abs() < 1e-12);

    // A timeout without Done only pays step penalties.
    let mut ep = Episode::reset(scene, target, 9, 5).unwrap();
    while !ep.is_done() {
        ep.step(Action::RotateLeft).unwrap();
    }
    assert_eq!(ep.steps_taken(), 5);
    assert!(!ep.is_success());
    assert!((ep.total_reward() - 5.0 * STEP_PENALTY).abs() < 1e-12);
    assert!(matches!(ep.step(Action::Done), Err(crgtsr::Error::EpisodeFinished)));
}

#[test]
fn failed_done_ends_the_episode() {
    let scene = Arc::new(generate_scene(4, &SceneSpec::default()).unwrap());
    let target = scene.categories_present()[0];
    for seed in 0..50 {
        let mut ep = Episode::reset(Arc::clone(&scene), target, seed, 50).unwrap();
        let success_here = success_at(&scene, &ep.state().pose, target);
        let out = ep.step(Action::Done).unwrap();
        assert!(out.done);
        assert_eq!(out.success, success_here);
    }
}

#[test]
fn line_of_sight_matches_dense_sampling() {
    let spec = SceneSpec { rows: 10, cols: 10, obstacle_density: 0.25, object_count: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for scene in scenes(&spec, 0..30) {
        for _ in 0..100 {
            let a = (rng.random_range(0..10), rng.random_range(0..10));
            let b = (rng.random_range(0..10), rng.random_range(0..10));
            if a == b {
                continue;
            }
            assert_eq!(line_of_sight(&scene, a, b), !sampled_line_blocked(&scene, a, b), "{a:?} -> {b:?}");
            checked += 1;
        }
    }
    assert!(checked > 2500);
}

#[test]
fn every_walkable_cell_reaches_every_target() {
    let spec = SceneSpec { rows: 10, cols: 10, obstacle_density: 0.2, object_count: 6 };
    for scene in scenes(&spec, 0..20) {
        for target in scene.categories_present() {
            let field = DistanceField::compute(&scene, target).unwrap();
            for (row, col) in scene.walkable_cells() {
                let pose = Pose { row, col, rotation: 0, horizon: 0 };
                assert!(field.optimal_path_length(&pose).is_ok(), "({row},{col}) cannot reach {target}");
            }
        }
    }
}

#[test]
fn scene_text_round_trip() {
    let scene = generate_scene(77, &SceneSpec::default()).unwrap();
    let back = Scene::from_text(&scene.to_text(), "mem").unwrap();
    assert_eq!(back, scene);
}

#[test]
fn observations_are_reproducible_per_seed() {
    let scene = Arc::new(generate_scene(8, &SceneSpec::default()).unwrap());
    let target = scene.categories_present()[0];
    let run = || {
        let mut ep = Episode::reset(Arc::clone(&scene), target, 123, 30).unwrap();
        let mut obs = vec![ep.observation().clone()];
        for a in [Action::RotateLeft, Action::MoveAhead, Action::RotateRight, Action::LookDown] {
            if ep.is_done() {
                break;
            }
            ep.step(a).unwrap();
            obs.push(ep.observation().clone());
        }
        obs
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transitions_match_the_reference_rule(seed in 0u64..500, actions in prop::collection::vec(0usize..5, 1..40)) {
        let scene = generate_scene(seed, &SceneSpec { rows: 7, cols: 7, obstacle_density: 0.2, object_count: 4 }).unwrap();
        let cells = scene.walkable_cells();
        let (row, col) = cells[seed as usize % cells.len()];
        let mut pose = Pose { row, col, rotation: 0, horizon: 0 };
        for a in actions {
            let action = Action::ALL[a];
            let next = apply_action(&scene, pose, action);
            prop_assert_eq!(next, oracle_transition(&scene, pose, action));
            prop_assert!(scene.is_walkable(next.row as isize, next.col as isize));
            pose = next;
        }
    }

    #[test]
    fn detections_are_within_the_view(seed in 0u64..500, rot in 0u16..8, pitch in 0i16..3) {
        let scene = generate_scene(seed, &SceneSpec::default()).unwrap();
        let cells = scene.walkable_cells();
        let (row, col) = cells[(seed as usize * 7) % cells.len()];
        let pose = Pose { row, col, rotation: rot * 45, horizon: (pitch - 1) * 30 };
        let obs = observe(&scene, &pose, 0, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(obs.patch.len(), PATCH_LEN);
        let mut last = None;
        for d in &obs.detections {
            prop_assert!(last < Some(d.category));
            last = Some(d.category);
            prop_assert!(d.depth > 0.0 && d.depth <= VIEW_RANGE);
            prop_assert!(d.bbox[0] <= d.bbox[2] && d.bbox[1] <= d.bbox[3]);
            prop_assert!(d.bbox.iter().all(|v| (0.0..=1.0).contains(v)));
            let o = scene.objects()[d.appearance];
            prop_assert_eq!(o.category, d.category);
            prop_assert!(height_visible(o.height, pose.horizon));
        }
    }
}

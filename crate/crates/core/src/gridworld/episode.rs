use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::perception::{observe, success_at};
use super::{apply_action, Action, AgentState, DistanceField, Observation, Pose, Scene, ROTATIONS, ROTATION_STEP};
use super::{STEP_PENALTY, SUCCESS_REWARD};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// One navigation attempt in a shared scene.
///
/// The scene seed, the episode seed and the action sequence fully determine
/// every observation and reward.
#[derive(Clone, Debug)]
pub struct Episode {
    scene: Arc<Scene>,
    target: usize,
    state: AgentState,
    observation: Observation,
    field: Arc<DistanceField>,
    optimal_length: u32,
    rng: ChaCha8Rng,
    max_steps: u32,
    done: bool,
    success: bool,
    total_reward: f64,
}

impl Episode {
    /// Places the agent on a random walkable cell with a random heading and
    /// level pitch.
    pub fn reset(scene: Arc<Scene>, target: usize, seed: u64, max_steps: u32) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        let field = Arc::new(DistanceField::compute(&scene, target)?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = scene.walkable_cells();
        let (row, col) = cells[rng.random_range(0..cells.len())];
        let rotation = rng.random_range(0..ROTATIONS) * ROTATION_STEP;
        let pose = Pose { row, col, rotation, horizon: 0 };
        let optimal_length = field.optimal_path_length(&pose)?;
        let observation = observe(&scene, &pose, 0, &mut rng);
        Ok(Self {
            scene,
            target,
            state: AgentState { pose, steps_taken: 0 },
            observation,
            field,
            optimal_length,
            rng,
            max_steps,
            done: false,
            success: false,
            total_reward: 0.0,
        })
    }

    /// Applies `action`. Every step costs [`STEP_PENALTY`]; a Done issued
    /// while a target instance is visible and close earns
    /// [`SUCCESS_REWARD`] on top. The episode ends on Done or after
    /// `max_steps` actions.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let mut reward = STEP_PENALTY;
        if action == Action::Done {
            self.done = true;
            self.success = success_at(&self.scene, &self.state.pose, self.target);
            if self.success {
                reward += SUCCESS_REWARD;
            }
        } else {
            self.state.pose = apply_action(&self.scene, self.state.pose, action);
        }
        self.state.steps_taken += 1;
        if self.state.steps_taken >= self.max_steps {
            self.done = true;
        }
        if action != Action::Done {
            self.observation = observe(&self.scene, &self.state.pose, self.state.steps_taken, &mut self.rng);
        }
        self.total_reward += reward;
        Ok(StepOutcome { reward, done: self.done, success: self.success })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn distance_field(&self) -> &DistanceField {
        &self.field
    }

    /// L_opt measured from the start pose.
    pub fn optimal_length(&self) -> u32 {
        self.optimal_length
    }

    /// The expert's action at the current pose.
    pub fn expert_action(&self) -> Result<Action> {
        self.field.expert_action(&self.scene, &self.state.pose)
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_success(&self) -> bool {
        self.success
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn steps_taken(&self) -> u32 {
        self.state.steps_taken
    }
}

#[cfg(test)]
mod tests {
    use super::super::{HeightTag, SceneObject};
    use super::*;

    fn room() -> Arc<Scene> {
        let objects = vec![
            SceneObject { category: 0, row: 0, col: 0, height: HeightTag::Mid },
            SceneObject { category: 1, row: 5, col: 5, height: HeightTag::Low },
            SceneObject { category: 2, row: 0, col: 5, height: HeightTag::High },
            SceneObject { category: 3, row: 5, col: 0, height: HeightTag::Mid },
        ];
        Arc::new(Scene::new(6, 6, vec![false; 36], objects).unwrap())
    }

    #[test]
    fn reset_is_seeded_and_valid() {
        let a = Episode::reset(room(), 1, 42, 50).unwrap();
        let b = Episode::reset(room(), 1, 42, 50).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.observation(), b.observation());
        let p = a.state().pose;
        assert!(a.scene().is_walkable(p.row as isize, p.col as isize));
        assert_eq!(p.horizon, 0);
        assert!(matches!(Episode::reset(room(), 9, 42, 50), Err(Error::TargetAbsent(9))));
    }

    #[test]
    fn move_north_decreases_y() {
        let mut ep = Episode::reset(room(), 1, 0, 50).unwrap();
        ep.state.pose = Pose { row: 3, col: 2, rotation: 0, horizon: 0 };
        let y0 = ep.state().y();
        let out = ep.step(Action::MoveAhead).unwrap();
        assert!((ep.state().y() - (y0 - 0.25)).abs() < 1e-12);
        assert_eq!(out.reward, STEP_PENALTY);
    }

    #[test]
    fn look_up_clamps() {
        let mut ep = Episode::reset(room(), 1, 0, 50).unwrap();
        ep.step(Action::LookUp).unwrap();
        assert_eq!(ep.state().horizon(), -30);
        let out = ep.step(Action::LookUp).unwrap();
        assert_eq!(ep.state().horizon(), -30);
        assert_eq!(out.reward, -0.01);
    }

    #[test]
    fn successful_done_pays_out() {
        let mut ep = Episode::reset(room(), 3, 0, 50).unwrap();
        // 1.0 m north of category 3, facing it
        ep.state.pose = Pose { row: 1, col: 0, rotation: 180, horizon: 0 };
        let out = ep.step(Action::Done).unwrap();
        assert!(out.success && out.done);
        assert!((out.reward - 4.99).abs() < 1e-12);
        assert!(matches!(ep.step(Action::MoveAhead), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn timeout_ends_episode() {
        let mut ep = Episode::reset(room(), 1, 0, 3).unwrap();
        for _ in 0..2 {
            assert!(!ep.step(Action::RotateLeft).unwrap().done);
        }
        let out = ep.step(Action::RotateLeft).unwrap();
        assert!(out.done && !out.success);
    }
}

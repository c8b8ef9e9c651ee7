use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::perception::success_at;
use super::{apply_action, Action, Pose, Scene, HORIZON_STEP, ROTATIONS, ROTATION_STEP};

const UNREACHED: u32 = u32::MAX;
const MOVES: [Action; 5] = [Action::MoveAhead, Action::RotateLeft, Action::RotateRight, Action::LookUp, Action::LookDown];

/// Exact action distances to the success region of one target.
///
/// Each pose stores the minimum number of non-Done actions needed to reach
/// a pose where Done succeeds, found by a multi-source breadth-first search
/// over reversed transitions (all actions cost one).
#[derive(Clone, Debug)]
pub struct DistanceField {
    rows: usize,
    cols: usize,
    target: usize,
    dist: Vec<u32>,
    goal: Vec<bool>,
}

fn state_count(scene: &Scene) -> usize {
    scene.rows() * scene.cols() * ROTATIONS as usize * 3
}

fn state_index(cols: usize, pose: &Pose) -> usize {
    let cell = pose.row * cols + pose.col;
    let rot = (pose.rotation / ROTATION_STEP) as usize;
    let hor = (pose.horizon / HORIZON_STEP + 1) as usize;
    (cell * ROTATIONS as usize + rot) * 3 + hor
}

fn pose_of(cols: usize, index: usize) -> Pose {
    let hor = index % 3;
    let rot = (index / 3) % ROTATIONS as usize;
    let cell = index / (3 * ROTATIONS as usize);
    Pose {
        row: cell / cols,
        col: cell % cols,
        rotation: rot as u16 * ROTATION_STEP,
        horizon: (hor as i16 - 1) * HORIZON_STEP,
    }
}

impl DistanceField {
    pub fn compute(scene: &Scene, target: usize) -> Result<Self> {
        if !scene.contains_category(target) {
            return Err(Error::TargetAbsent(target));
        }
        let n = state_count(scene);
        let cols = scene.cols();
        let mut goal = vec![false; n];
        let mut predecessors: Vec<Vec<u32>> = vec![Vec::new(); n];
        for idx in 0..n {
            let pose = pose_of(cols, idx);
            if !scene.is_walkable(pose.row as isize, pose.col as isize) {
                continue;
            }
            goal[idx] = success_at(scene, &pose, target);
            for action in MOVES {
                let next = state_index(cols, &apply_action(scene, pose, action));
                if next != idx {
                    predecessors[next].push(idx as u32);
                }
            }
        }
        let mut dist = vec![UNREACHED; n];
        let mut queue = VecDeque::new();
        for (idx, &is_goal) in goal.iter().enumerate() {
            if is_goal {
                dist[idx] = 0;
                queue.push_back(idx);
            }
        }
        while let Some(idx) = queue.pop_front() {
            for &p in &predecessors[idx] {
                let p = p as usize;
                if dist[p] == UNREACHED {
                    dist[p] = dist[idx] + 1;
                    queue.push_back(p);
                }
            }
        }
        Ok(Self { rows: scene.rows(), cols, target, dist, goal })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    fn check(&self, pose: &Pose) -> usize {
        assert!(pose.row < self.rows && pose.col < self.cols, "pose outside the scene");
        state_index(self.cols, pose)
    }

    /// Whether Done succeeds at `pose`.
    pub fn is_goal(&self, pose: &Pose) -> bool {
        self.goal[self.check(pose)]
    }

    /// Non-Done actions needed to reach the success region.
    pub fn moves_to_goal(&self, pose: &Pose) -> Option<u32> {
        let d = self.dist[self.check(pose)];
        (d != UNREACHED).then_some(d)
    }

    /// Minimum number of actions, Done included, that ends in success.
    pub fn optimal_path_length(&self, pose: &Pose) -> Result<u32> {
        self.moves_to_goal(pose).map(|d| d + 1).ok_or(Error::Unreachable(self.target))
    }

    /// First action of a shortest successful path, ties broken by
    /// [`Action::ALL`] order.
    pub fn expert_action(&self, scene: &Scene, pose: &Pose) -> Result<Action> {
        let d = self.moves_to_goal(pose).ok_or(Error::Unreachable(self.target))?;
        if d == 0 {
            return Ok(Action::Done);
        }
        MOVES
            .into_iter()
            .find(|&a| self.moves_to_goal(&apply_action(scene, *pose, a)) == Some(d - 1))
            .ok_or(Error::Unreachable(self.target))
    }
}

/// Shortest number of actions from `pose` to a successful Done.
pub fn optimal_path_length(scene: &Scene, pose: &Pose, target: usize) -> Result<u32> {
    DistanceField::compute(scene, target)?.optimal_path_length(pose)
}

/// The expert's next action from `pose`.
pub fn expert_action(scene: &Scene, pose: &Pose, target: usize) -> Result<Action> {
    DistanceField::compute(scene, target)?.expert_action(scene, pose)
}

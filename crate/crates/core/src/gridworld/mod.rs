//! Deterministic indoor grid simulator.
//!
//! Rooms are lattices of 0.25 m cells. The agent pose is a cell, a heading
//! in 45° steps (0 = north, clockwise positive) and a camera pitch in
//! {−30, 0, 30}. Perception is synthetic: every visible object category
//! yields one detection with a pinhole-style bounding box and its true
//! depth, plus a 7×7×3 egocentric occupancy patch.

mod episode;
mod perception;
mod planner;
mod scene;

pub use episode::{Episode, StepOutcome};
pub use perception::{
    bearing_degrees, egocentric_patch, height_visible, line_of_sight, observe, success_at, visible_instances,
    Detection, Observation,
};
pub use planner::{expert_action, optimal_path_length, DistanceField};
pub use scene::{generate_scene, HeightTag, Scene, SceneObject, SceneSpec};

/// Number of object categories.
pub const N_CATEGORIES: usize = 22;
/// Lattice pitch and MoveAhead step length, in meters.
pub const CELL_SIZE: f64 = 0.25;
/// Done succeeds only if a visible target instance is closer than this.
pub const SUCCESS_DISTANCE: f64 = 1.5;
/// Maximum detection range, in meters.
pub const VIEW_RANGE: f64 = 5.0;
/// Half of the horizontal field of view, in degrees.
pub const HALF_FOV: f64 = 45.0;
pub const STEP_PENALTY: f64 = -0.01;
pub const SUCCESS_REWARD: f64 = 5.0;
/// Side length of the egocentric grid patch.
pub const PATCH_SIZE: usize = 7;
/// Patch channels: obstacle, free, any-object.
pub const PATCH_CHANNELS: usize = 3;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * PATCH_CHANNELS;

pub const ROTATIONS: u16 = 8;
pub const ROTATION_STEP: u16 = 45;
pub const HORIZON_STEP: i16 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    MoveAhead = 0,
    RotateLeft = 1,
    RotateRight = 2,
    LookUp = 3,
    LookDown = 4,
    Done = 5,
}

impl Action {
    /// All actions, in tie-break order.
    pub const ALL: [Action; 6] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
        Action::Done,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveAhead => "MoveAhead",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::Done => "Done",
        }
    }
}

/// Position and camera orientation on the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pose {
    pub row: usize,
    pub col: usize,
    /// Degrees, a multiple of 45 in `[0, 360)`.
    pub rotation: u16,
    /// Degrees, one of −30, 0, 30. Negative is LookUp.
    pub horizon: i16,
}

impl Pose {
    pub fn x(&self) -> f64 {
        self.col as f64 * CELL_SIZE
    }

    pub fn y(&self) -> f64 {
        self.row as f64 * CELL_SIZE
    }

    /// Unit lattice step `(d_row, d_col)` of the current heading.
    pub fn heading(&self) -> (isize, isize) {
        heading_of(self.rotation)
    }
}

pub(crate) fn heading_of(rotation: u16) -> (isize, isize) {
    match rotation % 360 {
        0 => (-1, 0),
        45 => (-1, 1),
        90 => (0, 1),
        135 => (1, 1),
        180 => (1, 0),
        225 => (1, -1),
        270 => (0, -1),
        315 => (-1, -1),
        r => panic!("rotation {r} is not a multiple of 45"),
    }
}

/// Pose plus the number of actions taken so far in the episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub pose: Pose,
    pub steps_taken: u32,
}

impl AgentState {
    pub fn x(&self) -> f64 {
        self.pose.x()
    }

    pub fn y(&self) -> f64 {
        self.pose.y()
    }

    pub fn rotation(&self) -> u16 {
        self.pose.rotation
    }

    pub fn horizon(&self) -> i16 {
        self.pose.horizon
    }
}

/// Pose reached by taking `action` from `pose`. Blocked moves and clamped
/// looks leave the pose unchanged; `Done` never moves.
pub fn apply_action(scene: &Scene, pose: Pose, action: Action) -> Pose {
    let mut next = pose;
    match action {
        Action::MoveAhead => {
            let (dr, dc) = pose.heading();
            if scene.can_move(pose.row, pose.col, dr, dc) {
                next.row = (pose.row as isize + dr) as usize;
                next.col = (pose.col as isize + dc) as usize;
            }
        }
        Action::RotateLeft => next.rotation = (pose.rotation + 360 - ROTATION_STEP) % 360,
        Action::RotateRight => next.rotation = (pose.rotation + ROTATION_STEP) % 360,
        Action::LookUp => next.horizon = (pose.horizon - HORIZON_STEP).max(-HORIZON_STEP),
        Action::LookDown => next.horizon = (pose.horizon + HORIZON_STEP).min(HORIZON_STEP),
        Action::Done => {}
    }
    next
}

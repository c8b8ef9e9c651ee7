use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::perception::instance_visible;
use super::{Pose, CELL_SIZE, HORIZON_STEP, N_CATEGORIES, ROTATIONS, ROTATION_STEP, SUCCESS_DISTANCE};

const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeightTag {
    Low,
    Mid,
    High,
}

impl HeightTag {
    pub const ALL: [HeightTag; 3] = [HeightTag::Low, HeightTag::Mid, HeightTag::High];

    /// −1, 0, +1 for low, mid, high.
    pub fn level(self) -> i16 {
        match self {
            HeightTag::Low => -1,
            HeightTag::Mid => 0,
            HeightTag::High => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeightTag::Low => "low",
            HeightTag::Mid => "mid",
            HeightTag::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(HeightTag::Low),
            "mid" => Some(HeightTag::Mid),
            "high" => Some(HeightTag::High),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SceneObject {
    pub category: usize,
    pub row: usize,
    pub col: usize,
    pub height: HeightTag,
}

impl SceneObject {
    pub fn x(&self) -> f64 {
        self.col as f64 * CELL_SIZE
    }

    pub fn y(&self) -> f64 {
        self.row as f64 * CELL_SIZE
    }
}

/// Layout parameters for [`generate_scene`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub obstacle_density: f64,
    pub object_count: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { rows: 10, cols: 10, obstacle_density: 0.1, object_count: 6 }
    }
}

/// Immutable room layout.
///
/// Object cells are not walkable. Objects do not block line of sight;
/// obstacles do.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    rows: usize,
    cols: usize,
    obstacles: Vec<bool>,
    objects: Vec<SceneObject>,
    occupied: Vec<bool>,
}

impl Scene {
    pub fn new(rows: usize, cols: usize, obstacles: Vec<bool>, objects: Vec<SceneObject>) -> Result<Self> {
        if rows == 0 || cols == 0 || obstacles.len() != rows * cols {
            return Err(Error::InvalidSceneSpec(format!(
                "{rows}x{cols} grid with {} obstacle flags",
                obstacles.len()
            )));
        }
        let mut occupied = vec![false; rows * cols];
        for o in &objects {
            if o.row >= rows || o.col >= cols {
                return Err(Error::InvalidSceneSpec(format!("object at ({}, {}) outside grid", o.row, o.col)));
            }
            if o.category >= N_CATEGORIES {
                return Err(Error::InvalidSceneSpec(format!("category {} out of range", o.category)));
            }
            let i = o.row * cols + o.col;
            if obstacles[i] {
                return Err(Error::InvalidSceneSpec(format!("object on obstacle cell ({}, {})", o.row, o.col)));
            }
            if occupied[i] {
                return Err(Error::InvalidSceneSpec(format!("two objects share cell ({}, {})", o.row, o.col)));
            }
            occupied[i] = true;
        }
        Ok(Self { rows, cols, obstacles, objects, occupied })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols
    }

    pub fn is_obstacle(&self, row: usize, col: usize) -> bool {
        self.obstacles[row * self.cols + col]
    }

    pub fn has_object(&self, row: usize, col: usize) -> bool {
        self.occupied[row * self.cols + col]
    }

    /// In bounds, not an obstacle, not holding an object.
    pub fn is_walkable(&self, row: isize, col: isize) -> bool {
        self.in_bounds(row, col) && {
            let i = row as usize * self.cols + col as usize;
            !self.obstacles[i] && !self.occupied[i]
        }
    }

    /// Whether a single lattice step is allowed. Diagonal steps may not cut
    /// a corner: both orthogonal neighbours must be walkable too.
    pub fn can_move(&self, row: usize, col: usize, dr: isize, dc: isize) -> bool {
        let (r, c) = (row as isize, col as isize);
        if !self.is_walkable(r + dr, c + dc) {
            return false;
        }
        dr == 0 || dc == 0 || (self.is_walkable(r + dr, c) && self.is_walkable(r, c + dc))
    }

    pub fn walkable_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_walkable(r as isize, c as isize))
            .collect()
    }

    pub fn categories_present(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self.objects.iter().map(|o| o.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn contains_category(&self, category: usize) -> bool {
        self.objects.iter().any(|o| o.category == category)
    }

    /// Serializes to the `SCENE v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("SCENE v1 {} {} {}\n", self.rows, self.cols, self.objects.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.is_obstacle(r, c) { '#' } else { '.' });
            }
            out.push('\n');
        }
        for o in &self.objects {
            let _ = writeln!(out, "obj {} {} {} {}", o.category, o.row, o.col, o.height.as_str());
        }
        out
    }

    /// Parses the `SCENE v1` text format. `origin` labels error messages.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse { path: origin.to_string(), line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty scene file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "SCENE" || fields[1] != "v1" {
            return Err(err(ln, format!("expected `SCENE v1 <rows> <cols> <n_objects>`, found `{header}`")));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(ln, format!("invalid {what} `{s}`")));
        let rows = num(fields[2], "row count")?;
        let cols = num(fields[3], "column count")?;
        let n_objects = num(fields[4], "object count")?;

        let mut obstacles = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (ln, line) = lines.next().ok_or_else(|| err(r + 2, "missing grid row".into()))?;
            if line.chars().count() != cols {
                return Err(err(ln, format!("grid row has {} cells, expected {cols}", line.chars().count())));
            }
            for ch in line.chars() {
                match ch {
                    '.' => obstacles.push(false),
                    '#' => obstacles.push(true),
                    other => return Err(err(ln, format!("unexpected grid character `{other}`"))),
                }
            }
        }
        let mut objects = Vec::with_capacity(n_objects);
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 || f[0] != "obj" {
                return Err(err(ln, format!("expected `obj <category> <row> <col> <height>`, found `{line}`")));
            }
            let n = |s: &str| s.parse::<usize>().map_err(|_| err(ln, format!("invalid number `{s}`")));
            let height = HeightTag::parse(f[4]).ok_or_else(|| err(ln, format!("invalid height `{}`", f[4])))?;
            objects.push(SceneObject { category: n(f[1])?, row: n(f[2])?, col: n(f[3])?, height });
        }
        if objects.len() != n_objects {
            return Err(err(1, format!("header declares {n_objects} objects, found {}", objects.len())));
        }
        Scene::new(rows, cols, obstacles, objects).map_err(|e| err(1, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Walkable cells are 4-connected.
    pub(crate) fn walkable_connected(&self) -> bool {
        let cells = self.walkable_cells();
        let Some(&start) = cells.first() else { return false };
        let mut seen = vec![false; self.rows * self.cols];
        let mut queue = VecDeque::from([start]);
        seen[start.0 * self.cols + start.1] = true;
        let mut count = 0;
        while let Some((r, c)) = queue.pop_front() {
            count += 1;
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.is_walkable(nr, nc) {
                    let i = nr as usize * self.cols + nc as usize;
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back((nr as usize, nc as usize));
                    }
                }
            }
        }
        count == cells.len()
    }

    /// Some walkable pose sees `object` within success distance.
    pub(crate) fn object_approachable(&self, object: &SceneObject) -> bool {
        self.walkable_cells().into_iter().any(|(row, col)| {
            let d = ((row as f64 - object.row as f64).hypot(col as f64 - object.col as f64)) * CELL_SIZE;
            d < SUCCESS_DISTANCE
                && (0..ROTATIONS).any(|k| {
                    [-HORIZON_STEP, 0, HORIZON_STEP].into_iter().any(|horizon| {
                        let pose = Pose { row, col, rotation: k * ROTATION_STEP, horizon };
                        instance_visible(self, &pose, object)
                    })
                })
        })
    }
}

/// Generates a random scene whose walkable cells are connected and whose
/// every object can be seen from within success distance. The same seed and
/// spec always yield the same scene.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    if !(0.0..0.4).contains(&spec.obstacle_density) {
        return Err(Error::InvalidSceneSpec(format!("obstacle density {} not in [0, 0.4)", spec.obstacle_density)));
    }
    if spec.object_count < 4 {
        return Err(Error::InvalidSceneSpec(format!("object count {} below 4", spec.object_count)));
    }
    if spec.rows * spec.cols < spec.object_count + 2 {
        return Err(Error::InvalidSceneSpec(format!(
            "{}x{} grid cannot hold {} objects",
            spec.rows, spec.cols, spec.object_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let obstacles: Vec<bool> =
            (0..spec.rows * spec.cols).map(|_| rng.random_bool(spec.obstacle_density)).collect();
        let mut free: Vec<usize> = (0..obstacles.len()).filter(|&i| !obstacles[i]).collect();
        if free.len() < spec.object_count + 2 {
            continue;
        }
        free.shuffle(&mut rng);
        let objects = free[..spec.object_count]
            .iter()
            .map(|&i| SceneObject {
                category: rng.random_range(0..N_CATEGORIES),
                row: i / spec.cols,
                col: i % spec.cols,
                height: HeightTag::ALL[rng.random_range(0..3)],
            })
            .collect();
        let scene = Scene::new(spec.rows, spec.cols, obstacles, objects)?;
        if scene.walkable_connected() && scene.objects.iter().all(|o| scene.object_approachable(o)) {
            return Ok(scene);
        }
    }
    Err(Error::UnsatisfiableScene(MAX_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::default();
        assert_eq!(generate_scene(7, &spec).unwrap(), generate_scene(7, &spec).unwrap());
        assert_ne!(generate_scene(7, &spec).unwrap(), generate_scene(8, &spec).unwrap());
    }

    #[test]
    fn zero_density_has_no_obstacles() {
        let spec = SceneSpec { obstacle_density: 0.0, ..SceneSpec::default() };
        let s = generate_scene(3, &spec).unwrap();
        assert!((0..s.rows()).all(|r| (0..s.cols()).all(|c| !s.is_obstacle(r, c))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let dense = SceneSpec { obstacle_density: 0.5, ..SceneSpec::default() };
        assert!(matches!(generate_scene(1, &dense), Err(Error::InvalidSceneSpec(_))));
        let few = SceneSpec { object_count: 3, ..SceneSpec::default() };
        assert!(matches!(generate_scene(1, &few), Err(Error::InvalidSceneSpec(_))));
    }

    #[test]
    fn text_round_trip() {
        let s = generate_scene(11, &SceneSpec::default()).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("SCENE v1 10 10 6\n"));
        assert_eq!(Scene::from_text(&text, "mem").unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "SCENE v1 2 2 1\n..\n.x\nobj 0 0 0 low\n";
        let err = Scene::from_text(bad, "room.scene").unwrap_err().to_string();
        assert!(err.starts_with("room.scene:3:"), "{err}");
        let bad = "SCENE v1 2 2 1\n..\n..\nobj 0 0 0 sideways\n";
        let err = Scene::from_text(bad, "room.scene").unwrap_err().to_string();
        assert!(err.starts_with("room.scene:4:"), "{err}");
    }

    #[test]
    fn diagonal_moves_do_not_cut_corners() {
        let mut obstacles = vec![false; 9];
        obstacles[1] = true; // (0, 1)
        let s = Scene::new(3, 3, obstacles, vec![]).unwrap();
        assert!(!s.can_move(1, 0, -1, 1));
        assert!(s.can_move(1, 0, 1, 1));
    }
}

use rand::Rng;

use super::{
    heading_of, HeightTag, Pose, Scene, SceneObject, CELL_SIZE, HALF_FOV, HORIZON_STEP, N_CATEGORIES, PATCH_CHANNELS,
    PATCH_LEN, PATCH_SIZE, SUCCESS_DISTANCE, VIEW_RANGE,
};

/// Synthetic detector output for one category.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub category: usize,
    /// `[x1, y1, x2, y2]`, normalized to `[0, 1]`.
    pub bbox: [f64; 4],
    pub confidence: f64,
    /// Meters.
    pub depth: f64,
    /// Semantic label; equals `category` for the synthetic detector.
    pub label: usize,
    /// Index of the sampled instance in [`Scene::objects`].
    pub appearance: usize,
}

/// Everything the agent perceives at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// At most one per category, sorted by category.
    pub detections: Vec<Detection>,
    /// Egocentric patch, `PATCH_SIZE² × PATCH_CHANNELS`, cell-major.
    pub patch: Vec<f64>,
    pub timestamp: u32,
}

impl Observation {
    pub fn detection(&self, category: usize) -> Option<&Detection> {
        self.detections.iter().find(|d| d.category == category)
    }

    pub fn detected_categories(&self) -> Vec<usize> {
        self.detections.iter().map(|d| d.category).collect()
    }
}

/// Signed angle in degrees from the heading to the lattice offset
/// `(d_row, d_col)`; positive means to the right (clockwise).
pub fn bearing_degrees(rotation: u16, d_row: f64, d_col: f64) -> f64 {
    let (hr, hc) = heading_of(rotation);
    let (hx, hy) = (hc as f64, hr as f64);
    let cross = hx * d_row - hy * d_col;
    let dot = hx * d_col + hy * d_row;
    cross.atan2(dot).to_degrees()
}

/// Low objects need pitch −30 or 0, high objects +30 or 0, mid any.
pub fn height_visible(height: HeightTag, horizon: i16) -> bool {
    match height {
        HeightTag::Low => horizon <= 0,
        HeightTag::Mid => true,
        HeightTag::High => horizon >= 0,
    }
}

/// No obstacle interior is crossed by the segment between the two cell
/// centers. Endpoint cells are not checked; a segment passing exactly
/// through a lattice corner touches neither diagonal neighbour.
pub fn line_of_sight(scene: &Scene, from: (usize, usize), to: (usize, usize)) -> bool {
    let (r0, c0) = (from.0 as i64, from.1 as i64);
    let (r1, c1) = (to.0 as i64, to.1 as i64);
    let (dr, dc) = (r1 - r0, c1 - c0);
    let (step_r, step_c) = (dr.signum(), dc.signum());
    let (adr, adc) = (dr.abs(), dc.abs());
    // Crossing k of the column boundaries happens at t = (2k+1) / (2|dc|),
    // likewise for rows; compare the numerators cross-multiplied.
    let (mut kc, mut kr) = (0i64, 0i64);
    let (mut r, mut c) = (r0, c0);
    loop {
        let next_c = if adc == 0 { None } else { Some((2 * kc + 1) * adr) };
        let next_r = if adr == 0 { None } else { Some((2 * kr + 1) * adc) };
        match (next_c, next_r) {
            (Some(tc), Some(tr)) if tc == tr => {
                c += step_c;
                r += step_r;
                kc += 1;
                kr += 1;
            }
            (Some(tc), Some(tr)) if tc < tr => {
                c += step_c;
                kc += 1;
            }
            (Some(_), None) => {
                c += step_c;
                kc += 1;
            }
            (_, Some(_)) => {
                r += step_r;
                kr += 1;
            }
            (None, None) => return true,
        }
        if (r, c) == (r1, c1) {
            return true;
        }
        if scene.is_obstacle(r as usize, c as usize) {
            return false;
        }
    }
}

pub(crate) fn instance_visible(scene: &Scene, pose: &Pose, object: &SceneObject) -> bool {
    let d_row = object.row as f64 - pose.row as f64;
    let d_col = object.col as f64 - pose.col as f64;
    let dist = d_row.hypot(d_col) * CELL_SIZE;
    if dist == 0.0 || dist > VIEW_RANGE {
        return false;
    }
    if bearing_degrees(pose.rotation, d_row, d_col).abs() > HALF_FOV + 1e-9 {
        return false;
    }
    height_visible(object.height, pose.horizon)
        && line_of_sight(scene, (pose.row, pose.col), (object.row, object.col))
}

/// Indices of every object visible from `pose`.
pub fn visible_instances(scene: &Scene, pose: &Pose) -> Vec<usize> {
    scene
        .objects()
        .iter()
        .enumerate()
        .filter(|(_, o)| instance_visible(scene, pose, o))
        .map(|(i, _)| i)
        .collect()
}

/// Done would succeed here: some visible instance of `target` is closer
/// than the success distance.
pub fn success_at(scene: &Scene, pose: &Pose, target: usize) -> bool {
    scene.objects().iter().any(|o| {
        o.category == target
            && (o.row as f64 - pose.row as f64).hypot(o.col as f64 - pose.col as f64) * CELL_SIZE < SUCCESS_DISTANCE
            && instance_visible(scene, pose, o)
    })
}

/// The 7×7 egocentric patch: row 0 is three cells ahead, column 0 three
/// cells to the left. Channels per cell are obstacle (also out of
/// bounds), walkable floor, and object.
pub fn egocentric_patch(scene: &Scene, pose: &Pose) -> Vec<f64> {
    let (fr, fc) = heading_of(pose.rotation);
    let (rr, rc) = heading_of((pose.rotation + 90) % 360);
    let half = (PATCH_SIZE / 2) as isize;
    let mut patch = Vec::with_capacity(PATCH_LEN);
    for p in 0..PATCH_SIZE as isize {
        let ahead = half - p;
        for q in 0..PATCH_SIZE as isize {
            let right = q - half;
            let r = pose.row as isize + ahead * fr + right * rr;
            let c = pose.col as isize + ahead * fc + right * rc;
            let cell = if scene.in_bounds(r, c) {
                let (r, c) = (r as usize, c as usize);
                [
                    scene.is_obstacle(r, c) as u8 as f64,
                    scene.is_walkable(r as isize, c as isize) as u8 as f64,
                    scene.has_object(r, c) as u8 as f64,
                ]
            } else {
                [1.0, 0.0, 0.0]
            };
            patch.extend_from_slice(&cell[..PATCH_CHANNELS]);
        }
    }
    patch
}

fn detection_for(scene: &Scene, pose: &Pose, index: usize) -> Detection {
    let o = scene.objects()[index];
    let d_row = o.row as f64 - pose.row as f64;
    let d_col = o.col as f64 - pose.col as f64;
    let depth = d_row.hypot(d_col) * CELL_SIZE;
    let bearing = bearing_degrees(pose.rotation, d_row, d_col);
    let size = (0.5 / depth).clamp(0.05, 1.0);
    let cx = 0.5 + bearing / (2.0 * HALF_FOV);
    let view_level = pose.horizon / HORIZON_STEP;
    let cy = 0.5 - 0.25 * f64::from(o.height.level() - view_level);
    let bbox = [
        (cx - size / 2.0).clamp(0.0, 1.0),
        (cy - size / 2.0).clamp(0.0, 1.0),
        (cx + size / 2.0).clamp(0.0, 1.0),
        (cy + size / 2.0).clamp(0.0, 1.0),
    ];
    Detection {
        category: o.category,
        bbox,
        confidence: (1.0 - depth / 6.0).clamp(0.1, 1.0),
        depth,
        label: o.category,
        appearance: index,
    }
}

/// Synthetic perception from `pose`. When several instances of a category
/// are visible one is drawn uniformly from `rng`.
pub fn observe<R: Rng + ?Sized>(scene: &Scene, pose: &Pose, timestamp: u32, rng: &mut R) -> Observation {
    let visible = visible_instances(scene, pose);
    let mut detections = Vec::new();
    for category in 0..N_CATEGORIES {
        let candidates: Vec<usize> =
            visible.iter().copied().filter(|&i| scene.objects()[i].category == category).collect();
        if candidates.is_empty() {
            continue;
        }
        let pick = candidates[rng.random_range(0..candidates.len())];
        detections.push(detection_for(scene, pose, pick));
    }
    Observation { detections, patch: egocentric_patch(scene, pose), timestamp }
}

//! Independent reference implementations used by the integration tests.
//! Everything here works on plain nested vectors and scalar loops.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crgtsr::gridworld::{generate_scene, success_at, Action, Pose, Scene, SceneSpec};
use crgtsr::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn randn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn max_diff(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!(t.rows(), m.len(), "row count");
    let mut worst: f64 = 0.0;
    for (r, row) in m.iter().enumerate() {
        assert_eq!(t.cols(), row.len(), "column count");
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((t.at(r, c) - v).abs());
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `A_ij = exp(max(0, e1_i·e2_j)) / Σ_k exp(max(0, e1_i·e2_k))`.
pub fn adjacency_oracle(e1: &Mat, e2: &Mat) -> Mat {
    e1.iter()
        .map(|ri| {
            let logits: Vec<f64> = e2.iter().map(|rj| dot(ri, rj).max(0.0)).collect();
            softmax(&logits)
        })
        .collect()
}

/// Node `i`: `max(0, Σ_j a_ij · (x_j W))`, one row at a time.
pub fn gcn_oracle(a: &Mat, x: &Mat, w: &Mat) -> Mat {
    let cols = w[0].len();
    a.iter()
        .map(|ai| {
            let mut out = vec![0.0; cols];
            for (j, xj) in x.iter().enumerate() {
                for c in 0..cols {
                    let xw: f64 = xj.iter().enumerate().map(|(k, v)| v * w[k][c]).sum();
                    out[c] += ai[j] * xw;
                }
            }
            out.into_iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

/// Single-head attention where query `i` sees only the keys listed by
/// `keys(i)`: `Σ_j softmax_j(q_i·k_j/√d)·v_j`.
pub fn attention_oracle(q: &Mat, k: &Mat, v: &Mat, keys: impl Fn(usize) -> Vec<usize>) -> Mat {
    let d = q[0].len() as f64;
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let idx = keys(i);
            let scores: Vec<f64> = idx.iter().map(|&j| dot(qi, &k[j]) / d.sqrt()).collect();
            let p = softmax(&scores);
            let mut out = vec![0.0; v[0].len()];
            for (pj, &j) in p.iter().zip(&idx) {
                for (o, vv) in out.iter_mut().zip(&v[j]) {
                    *o += pj * vv;
                }
            }
            out
        })
        .collect()
}

const HEADINGS: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn free(scene: &Scene, r: isize, c: isize) -> bool {
    r >= 0
        && c >= 0
        && (r as usize) < scene.rows()
        && (c as usize) < scene.cols()
        && !scene.is_obstacle(r as usize, c as usize)
        && !scene.has_object(r as usize, c as usize)
}

/// Transition rule written from the environment description: one cell per
/// MoveAhead (diagonals need both side cells free), 45° turns, pitch
/// clamped to ±30°.
pub fn oracle_transition(scene: &Scene, p: Pose, action: Action) -> Pose {
    let mut n = p;
    match action {
        Action::MoveAhead => {
            let (dr, dc) = HEADINGS[(p.rotation / 45) as usize];
            let (r, c) = (p.row as isize, p.col as isize);
            let ok = free(scene, r + dr, c + dc) && (dr == 0 || dc == 0 || (free(scene, r + dr, c) && free(scene, r, c + dc)));
            if ok {
                n.row = (r + dr) as usize;
                n.col = (c + dc) as usize;
            }
        }
        Action::RotateLeft => n.rotation = (p.rotation + 315) % 360,
        Action::RotateRight => n.rotation = (p.rotation + 45) % 360,
        Action::LookUp => n.horizon = (p.horizon - 30).max(-30),
        Action::LookDown => n.horizon = (p.horizon + 30).min(30),
        Action::Done => {}
    }
    n
}

/// Forward breadth-first search from `start`; returns the number of
/// actions including the final Done.
pub fn bfs_path_length(scene: &Scene, start: Pose, target: usize) -> Option<u32> {
    let mut seen: HashMap<Pose, u32> = HashMap::from([(start, 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let d = seen[&p];
        if success_at(scene, &p, target) {
            return Some(d + 1);
        }
        for a in [Action::MoveAhead, Action::RotateLeft, Action::RotateRight, Action::LookUp, Action::LookDown] {
            let n = oracle_transition(scene, p, a);
            if !seen.contains_key(&n) {
                seen.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    None
}

/// Whether the straight segment between the two cell centers enters the
/// open interior of any obstacle cell, found by dense sampling. Samples
/// within `margin` of a cell border count for neither side.
pub fn sampled_line_blocked(scene: &Scene, from: (usize, usize), to: (usize, usize)) -> bool {
    let (r0, c0) = (from.0 as f64, from.1 as f64);
    let (r1, c1) = (to.0 as f64, to.1 as f64);
    let steps = 4000;
    let margin = 1e-6;
    for s in 1..steps {
        let t = s as f64 / steps as f64;
        let (r, c) = (r0 + t * (r1 - r0), c0 + t * (c1 - c0));
        let (fr, fc) = ((r + 0.5).floor(), (c + 0.5).floor());
        let (dr, dc) = ((r + 0.5) - fr, (c + 0.5) - fc);
        if dr < margin || dr > 1.0 - margin || dc < margin || dc > 1.0 - margin {
            continue;
        }
        let (ri, ci) = (fr as usize, fc as usize);
        if (ri, ci) == from || (ri, ci) == to {
            continue;
        }
        if scene.is_obstacle(ri, ci) {
            return true;
        }
    }
    false
}

pub fn scenes(spec: &SceneSpec, seeds: std::ops::Range<u64>) -> Vec<Arc<Scene>> {
    seeds.map(|s| Arc::new(generate_scene(s, spec).unwrap())).collect()
}

pub fn synthetic_results<R: Rng + ?Sized>(rng: &mut R, n: usize, runs: usize) -> Vec<crgtsr::eval_metrics::EpisodeResult> {
    (0..n)
        .map(|i| {
            let optimal_length = rng.random_range(1..15);
            let success = rng.random_bool(0.6);
            let path_length = if success { optimal_length + rng.random_range(0..20) } else { rng.random_range(1..60) };
            crgtsr::eval_metrics::EpisodeResult {
                run: i % runs,
                scene: i / 10,
                episode: i % 10,
                target: rng.random_range(0..22),
                seed: rng.random(),
                success,
                path_length,
                optimal_length,
            }
        })
        .collect()
}

/// Successes counted by hand.
pub fn sr_oracle(results: &[crgtsr::eval_metrics::EpisodeResult]) -> f64 {
    let mut hits = 0u64;
    for r in results {
        if r.success {
            hits += 1;
        }
    }
    hits as f64 / results.len() as f64
}

/// Running sum of `L_opt / max(L_n, L_opt)` over successes, in order.
pub fn spl_oracle(results: &[crgtsr::eval_metrics::EpisodeResult]) -> f64 {
    let mut sum = 0.0;
    for r in results {
        if r.success {
            let longer = if r.path_length > r.optimal_length { r.path_length } else { r.optimal_length };
            sum += r.optimal_length as f64 / longer as f64;
        }
    }
    sum / results.len() as f64
}

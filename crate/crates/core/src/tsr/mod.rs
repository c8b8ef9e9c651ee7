//! Temporal, spatial and region attention over the graph sequence.
//!
//! Graph sequences are stacked time-major: a window of `L` frames of
//! `N × C_f` becomes an `(L·N) × C_f` matrix whose row `t·N + n` is node
//! `n` at step `t`. Per-category attention over time is then a block mask
//! on that matrix rather than `N` separate small attentions.

mod layers;

use rand::Rng;

pub use layers::{
    multi_head_core, sdgcn, AttentionBlock, DecoderBlock, FeedForward, LayerNorm, Linear, MultiHeadAttention, Sdgcn,
};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gridworld::{PATCH_CHANNELS, PATCH_LEN, PATCH_SIZE};
use crate::tensor::{AttentionMask, Graph, ParamId, ParamSet, Tape, Tensor, Var};

/// Number of global regions (cells of the egocentric patch).
pub const REGIONS: usize = PATCH_SIZE * PATCH_SIZE;

const POSITION_STD: f64 = 0.5;
const TARGET_STD: f64 = 1.0;

/// A module output together with every attention probability matrix
/// produced on the way.
#[derive(Clone, Debug)]
pub struct Traced {
    pub output: Var,
    pub probs: Vec<Var>,
}

/// Row `t·N + i` may attend to row `s·N + j` iff `i == j`.
pub fn temporal_mask(n: usize, l: usize) -> AttentionMask {
    AttentionMask::from_fn(n * l, n * l, |i, j| i % n == j % n)
}

/// Query node `i` may attend to the `L` time slots of node `i`.
pub fn spatial_mask(n: usize, l: usize) -> AttentionMask {
    AttentionMask::from_fn(n, n * l, |i, j| j % n == i)
}

/// Per-category self-attention over time on a time-major stack.
pub fn temporal_core(tape: &mut Tape, h: Var, n: usize, heads: usize) -> Result<(Var, Vec<Var>)> {
    let rows = tape.shape(h)[0];
    if n == 0 || rows % n != 0 {
        return Err(Error::Shape { op: "temporal_core", lhs: tape.shape(h).to_vec(), rhs: vec![n] });
    }
    let mask = temporal_mask(n, rows / n);
    multi_head_core(tape, h, h, h, heads, Some(&mask))
}

/// Each node of `z` attends to its own time slots in the stack `h_t`.
pub fn spatial_core(tape: &mut Tape, z: Var, h_t: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let n = tape.shape(z)[0];
    let rows = tape.shape(h_t)[0];
    if rows % n != 0 {
        return Err(Error::Shape { op: "spatial_core", lhs: tape.shape(z).to_vec(), rhs: tape.shape(h_t).to_vec() });
    }
    let mask = spatial_mask(n, rows / n);
    multi_head_core(tape, z, h_t, h_t, heads, Some(&mask))
}

/// Regions attend to graph nodes.
pub fn region_core(tape: &mut Tape, g_p: Var, nodes: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    multi_head_core(tape, g_p, nodes, nodes, heads, None)
}

/// `[relu(A·F_a), F_r, H_S]`, before the learned projection.
pub fn fuse_concat(tape: &mut Tape, a: Var, f_a: Var, f_r: Var, h_s: Var) -> Result<Var> {
    let mixed = tape.matmul(a, f_a)?;
    let mixed = tape.relu(mixed);
    tape.concat(&[mixed, f_r, h_s], 1)
}

/// Learnable parameters of the attention stack.
#[derive(Clone, Debug)]
pub struct Tsr {
    config: ModelConfig,
    pub temporal_position: ParamId,
    pub temporal_blocks: Vec<AttentionBlock>,
    pub temporal_sdgcn: Sdgcn,
    pub node_position: ParamId,
    pub spatial_blocks: Vec<AttentionBlock>,
    pub spatial_sdgcn: Sdgcn,
    pub fusion: Linear,
    pub patch_embedding: Linear,
    pub region_position: ParamId,
    /// `1 × C_g`, added to the target category's node row before region
    /// attention.
    pub target_marker: ParamId,
    pub region_blocks: Vec<DecoderBlock>,
}

impl Tsr {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Self {
        let (n, l, cf, cg, heads) =
            (config.n_categories, config.seq_len, config.c_feature, config.c_global, config.heads);
        let temporal_position =
            params.register("tsr.temporal.position", Tensor::randn(&[l, cf], POSITION_STD, rng));
        let temporal_blocks = (0..config.layers)
            .map(|i| AttentionBlock::new(params, &format!("tsr.temporal.block{i}"), cf, heads, rng))
            .collect();
        let temporal_sdgcn = Sdgcn::new(params, "tsr.temporal.sdgcn", cf, rng);
        let node_position = params.register("tsr.spatial.position", Tensor::randn(&[n, cf], POSITION_STD, rng));
        let spatial_blocks = (0..config.layers)
            .map(|i| AttentionBlock::new(params, &format!("tsr.spatial.block{i}"), cf, heads, rng))
            .collect();
        let spatial_sdgcn = Sdgcn::new(params, "tsr.spatial.sdgcn", cf, rng);
        let fusion = Linear::new(params, "tsr.fusion", config.c_fused(), cg, true, rng);
        let patch_embedding = Linear::new(params, "tsr.region.patch", PATCH_CHANNELS, cg, true, rng);
        let region_position =
            params.register("tsr.region.position", Tensor::randn(&[REGIONS, cg], POSITION_STD, rng));
        let target_marker = params.register("tsr.region.target", Tensor::randn(&[1, cg], TARGET_STD, rng));
        let region_blocks = (0..config.layers)
            .map(|i| DecoderBlock::new(params, &format!("tsr.region.block{i}"), cg, heads, rng))
            .collect();
        Self {
            config: *config,
            temporal_position,
            temporal_blocks,
            temporal_sdgcn,
            node_position,
            spatial_blocks,
            spatial_sdgcn,
            fusion,
            patch_embedding,
            region_position,
            target_marker,
            region_blocks,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Temporal attention over `L` frames of `N × C_f`, oldest first.
    /// Returns the time-major `(L·N) × C_f` stack `H_T`.
    pub fn temporal(&self, g: &mut Graph, frames: &[Var]) -> Result<Traced> {
        let (n, l) = (self.config.n_categories, self.config.seq_len);
        if frames.len() != l {
            return Err(Error::InvalidArgument(format!("expected {l} frames, got {}", frames.len())));
        }
        let stacked = g.concat(frames, 0)?;
        let table = g.p(self.temporal_position);
        let steps: Vec<usize> = (0..l).flat_map(|t| std::iter::repeat_n(t, n)).collect();
        let position = g.gather_rows(table, &steps)?;
        let mut x = g.add(stacked, position)?;
        let mask = temporal_mask(n, l);
        let mut probs = Vec::new();
        for block in &self.temporal_blocks {
            let (y, p) = block.forward(g, x, None, Some(&mask))?;
            x = y;
            probs.extend(p);
        }
        let mut steps = Vec::with_capacity(l);
        for t in 0..l {
            let frame = g.slice(x, 0, t * n, n)?;
            steps.push(self.temporal_sdgcn.forward(g, frame)?);
        }
        Ok(Traced { output: g.concat(&steps, 0)?, probs })
    }

    /// Spatial attention: the current graph `z_t` queries its own history
    /// in `h_t`. Returns `H_S`, `N × C_f`.
    pub fn spatial(&self, g: &mut Graph, z_t: Var, h_t: Var) -> Result<Traced> {
        let (n, l) = (self.config.n_categories, self.config.seq_len);
        let position = g.p(self.node_position);
        let mut x = g.add(z_t, position)?;
        let mask = spatial_mask(n, l);
        let mut probs = Vec::new();
        for block in &self.spatial_blocks {
            let (y, p) = block.forward(g, x, Some(h_t), Some(&mask))?;
            x = y;
            probs.extend(p);
        }
        Ok(Traced { output: self.spatial_sdgcn.forward(g, x)?, probs })
    }

    /// Fused node features projected to `N × C_g`.
    pub fn fuse(&self, g: &mut Graph, a: Var, f_a: Var, f_r: Var, h_s: Var) -> Result<Var> {
        let cat = fuse_concat(g, a, f_a, f_r, h_s)?;
        self.fusion.forward(g, cat)
    }

    /// Embeds the egocentric patch as `REGIONS × C_g` region features.
    pub fn encode_global(&self, g: &mut Graph, patch: &[f64]) -> Result<Var> {
        if patch.len() != PATCH_LEN {
            return Err(Error::DataLength { shape: vec![REGIONS, PATCH_CHANNELS], len: patch.len() });
        }
        let cells = g.constant(Tensor::new(vec![REGIONS, PATCH_CHANNELS], patch.to_vec())?);
        let embedded = self.patch_embedding.forward(g, cells)?;
        let position = g.p(self.region_position);
        g.add(embedded, position)
    }

    /// Region attention conditioned on `target`; mean-pools the regions to
    /// the `1 × C_g` representation `F`.
    pub fn region(&self, g: &mut Graph, g_p: Var, nodes: Var, target: usize) -> Result<Traced> {
        if target >= self.config.n_categories {
            return Err(Error::TargetOutOfRange { target, classes: self.config.n_categories });
        }
        let mut onehot = Tensor::zeros(&[self.config.n_categories, 1]);
        onehot.set(target, 0, 1.0);
        let onehot = g.constant(onehot);
        let marker = g.p(self.target_marker);
        let marker = g.matmul(onehot, marker)?;
        let nodes = g.add(nodes, marker)?;
        let mut x = g_p;
        let mut probs = Vec::new();
        for block in &self.region_blocks {
            let (y, p) = block.forward(g, x, nodes)?;
            x = y;
            probs.extend(p);
        }
        Ok(Traced { output: g.mean_rows(x)?, probs })
    }
}

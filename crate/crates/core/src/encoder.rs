//! The full representation extractor: relation graph followed by the
//! attention stack, mapping a window of observations and a target category
//! to the visual representation `F`.

use rand::Rng;

use crate::config::ModelConfig;
use crate::crg::{GraphSequence, NodeFeatures, RelationGraph};
use crate::error::{Error, Result};
use crate::gridworld::Observation;
use crate::tensor::{Graph, ParamSet, Var};
use crate::tsr::Tsr;

/// Every intermediate of one encoder pass.
#[derive(Clone, Debug)]
pub struct Encoding {
    /// `1 × C_g`
    pub f: Var,
    pub adjacency: Var,
    /// Node features of the newest observation.
    pub nodes: NodeFeatures,
    /// The padded graph sequence, oldest first.
    pub sequence: Vec<Var>,
    pub temporal: Var,
    pub spatial: Var,
    pub fused: Var,
    pub global: Var,
    /// Every attention probability matrix of the pass.
    pub probs: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub crg: RelationGraph,
    pub tsr: Tsr,
    config: ModelConfig,
}

impl Encoder {
    /// Registers the `crg.*` and `tsr.*` parameters.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let crg = RelationGraph::new(params, config, rng);
        let tsr = Tsr::new(params, config, rng);
        Ok(Self { crg, tsr, config: *config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Encodes the most recent `L` observations of `window` (oldest first).
    /// Shorter windows are padded by repeating their first observation.
    pub fn encode(&self, g: &mut Graph, window: &[&Observation], target: usize) -> Result<Encoding> {
        let newest = *window.last().ok_or_else(|| Error::InvalidArgument("empty observation window".into()))?;
        let start = window.len().saturating_sub(self.config.seq_len);
        let adjacency = self.crg.adjacency(g)?;
        let mut seq = GraphSequence::new(self.config.seq_len);
        let mut nodes = None;
        for obs in &window[start..] {
            let nf = self.crg.node_features(g, obs)?;
            seq.push(self.crg.encode(g, adjacency, nf.x)?);
            nodes = Some(nf);
        }
        let nodes = nodes.expect("window is non-empty");
        let sequence = seq.to_vec();
        let z_t = *seq.newest().expect("window is non-empty");

        let temporal = self.tsr.temporal(g, &sequence)?;
        let spatial = self.tsr.spatial(g, z_t, temporal.output)?;
        let fused = self.tsr.fuse(g, adjacency, nodes.appearance, nodes.raw, spatial.output)?;
        let global = self.tsr.encode_global(g, &newest.patch)?;
        let region = self.tsr.region(g, global, fused, target)?;

        let mut probs = temporal.probs;
        probs.extend(spatial.probs);
        probs.extend(region.probs);
        Ok(Encoding {
            f: region.output,
            adjacency,
            nodes,
            sequence,
            temporal: temporal.output,
            spatial: spatial.output,
            fused,
            global,
            probs,
        })
    }
}

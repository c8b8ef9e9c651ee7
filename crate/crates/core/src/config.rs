use crate::error::{Error, Result};
use crate::gridworld::N_CATEGORIES;

/// Bounding box (4), confidence, depth and the semantic-label scalar.
pub const DETECTION_FEATURES: usize = 7;

/// Architecture hyper-parameters shared by every learnable module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// N, graph nodes (one per object category).
    pub n_categories: usize,
    /// L, length of the graph representation sequence.
    pub seq_len: usize,
    pub heads: usize,
    /// Layers per attention module.
    pub layers: usize,
    /// C, width of the category embedding dictionaries.
    pub c_dict: usize,
    /// C_a, appearance feature width.
    pub c_appearance: usize,
    /// C_f, graph representation width.
    pub c_feature: usize,
    /// C_g, region / global feature width (also the width of F).
    pub c_global: usize,
    /// LSTM hidden width.
    pub d_hidden: usize,
    /// Width of the policy's target-category embedding.
    pub c_target: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_categories: N_CATEGORIES,
            seq_len: 4,
            heads: 4,
            layers: 2,
            c_dict: 32,
            c_appearance: 16,
            c_feature: 64,
            c_global: 64,
            d_hidden: 64,
            c_target: 16,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration for fast tests and smoke runs.
    pub fn small() -> Self {
        Self { c_dict: 8, c_appearance: 8, c_feature: 16, c_global: 16, d_hidden: 32, c_target: 8, ..Self::default() }
    }

    /// C_n = detection features + appearance width.
    pub fn c_node(&self) -> usize {
        DETECTION_FEATURES + self.c_appearance
    }

    /// C_r, the raw detection block of the fused features.
    pub fn c_raw(&self) -> usize {
        DETECTION_FEATURES
    }

    /// Width of the fused features before projection.
    pub fn c_fused(&self) -> usize {
        self.c_appearance + self.c_raw() + self.c_feature
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("n_categories", self.n_categories),
            ("seq_len", self.seq_len),
            ("heads", self.heads),
            ("layers", self.layers),
            ("c_dict", self.c_dict),
            ("c_appearance", self.c_appearance),
            ("c_feature", self.c_feature),
            ("c_global", self.c_global),
            ("d_hidden", self.d_hidden),
            ("c_target", self.c_target),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.n_categories > N_CATEGORIES {
            return Err(Error::InvalidArgument(format!("n_categories must be at most {N_CATEGORIES}")));
        }
        for (name, width) in [("c_feature", self.c_feature), ("c_global", self.c_global)] {
            if width % self.heads != 0 {
                return Err(Error::InvalidArgument(format!("heads {} does not divide {name} {width}", self.heads)));
            }
        }
        Ok(())
    }
}

//! Category relation graph: a learned global adjacency between object
//! categories, masked per-observation node features, and GCN encoding.

use std::collections::VecDeque;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gridworld::Observation;
use crate::tensor::{Graph, ParamId, ParamSet, Tape, Tensor, Var};

/// Detection fields copied verbatim into a node row: bbox, confidence, depth.
const DETECTION_SCALARS: usize = 6;

/// The two learnable `N × C` embedding dictionaries behind the adjacency.
#[derive(Clone, Copy, Debug)]
pub struct CategoryDictionaries {
    pub e1: ParamId,
    pub e2: ParamId,
}

/// Learnable parameters of the relation graph.
#[derive(Clone, Copy, Debug)]
pub struct RelationGraph {
    pub dictionaries: CategoryDictionaries,
    /// `C_n × C_f`
    pub weight: ParamId,
    /// `N × 1`, the learned semantic-label scalar.
    pub label_embedding: ParamId,
    /// `N × C_a`
    pub appearance: ParamId,
    /// `1 × C_a`, depth modulation of the appearance rows.
    pub appearance_depth: ParamId,
    n: usize,
}

/// Per-observation node features and their constituents.
#[derive(Clone, Copy, Debug)]
pub struct NodeFeatures {
    /// `N × C_n`
    pub x: Var,
    /// `N × C_r`, the detection block `[bbox, c, d, s]`.
    pub raw: Var,
    /// `N × C_a`
    pub appearance: Var,
}

/// `row-softmax(relu(E1·E2ᵀ))`.
pub fn compute_adjacency(tape: &mut Tape, e1: Var, e2: Var) -> Result<Var> {
    let e2t = tape.transpose(e2)?;
    let logits = tape.matmul(e1, e2t)?;
    let logits = tape.relu(logits);
    tape.softmax(logits, 1)
}

/// `relu(A·X·W)`.
pub fn gcn_forward(tape: &mut Tape, a: Var, x: Var, w: Var) -> Result<Var> {
    let ax = tape.matmul(a, x)?;
    let axw = tape.matmul(ax, w)?;
    Ok(tape.relu(axw))
}

impl RelationGraph {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Self {
        let (n, c) = (config.n_categories, config.c_dict);
        let dict_std = 1.0 / (c as f64).sqrt().sqrt();
        let e1 = params.register("crg.e1", Tensor::randn(&[n, c], dict_std, rng));
        let e2 = params.register("crg.e2", Tensor::randn(&[n, c], dict_std, rng));
        let c_node = config.c_node();
        let weight = params.register(
            "crg.weight",
            Tensor::randn(&[c_node, config.c_feature], (2.0 / c_node as f64).sqrt(), rng),
        );
        let label_embedding = params.register("crg.label_embedding", Tensor::randn(&[n, 1], 0.5, rng));
        let appearance = params.register("crg.appearance", Tensor::randn(&[n, config.c_appearance], 0.5, rng));
        let appearance_depth =
            params.register("crg.appearance_depth", Tensor::randn(&[1, config.c_appearance], 0.1, rng));
        Self {
            dictionaries: CategoryDictionaries { e1, e2 },
            weight,
            label_embedding,
            appearance,
            appearance_depth,
            n,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.n
    }

    /// The global adjacency `A`.
    pub fn adjacency(&self, g: &mut Graph) -> Result<Var> {
        let e1 = g.p(self.dictionaries.e1);
        let e2 = g.p(self.dictionaries.e2);
        compute_adjacency(g, e1, e2)
    }

    /// Node features for `obs`; rows of undetected categories are zero.
    pub fn node_features(&self, g: &mut Graph, obs: &Observation) -> Result<NodeFeatures> {
        let n = self.n;
        let mut scalars = Tensor::zeros(&[n, DETECTION_SCALARS]);
        let mut mask = Tensor::zeros(&[n, 1]);
        let mut depth = Tensor::zeros(&[n, 1]);
        let mut labels = vec![0; n];
        for det in &obs.detections {
            if det.category >= n {
                return Err(Error::TargetOutOfRange { target: det.category, classes: n });
            }
            let row = &mut scalars.data_mut()[det.category * DETECTION_SCALARS..][..DETECTION_SCALARS];
            row[..4].copy_from_slice(&det.bbox);
            row[4] = det.confidence;
            row[5] = det.depth;
            mask.set(det.category, 0, 1.0);
            depth.set(det.category, 0, det.depth);
            labels[det.category] = det.label.min(n - 1);
        }
        let scalars = g.constant(scalars);
        let mask = g.constant(mask);
        let depth = g.constant(depth);

        let label_table = g.p(self.label_embedding);
        let label = g.gather_rows(label_table, &labels)?;
        let label = g.mul_col(label, mask)?;
        let raw = g.concat(&[scalars, label], 1)?;

        let table = g.p(self.appearance);
        let modulation = g.p(self.appearance_depth);
        let shift = g.matmul(depth, modulation)?;
        let appearance = g.add(table, shift)?;
        let appearance = g.mul_col(appearance, mask)?;

        let x = g.concat(&[raw, appearance], 1)?;
        Ok(NodeFeatures { x, raw, appearance })
    }

    /// `Z = relu(A·X·W)` for one observation.
    pub fn encode(&self, g: &mut Graph, a: Var, x: Var) -> Result<Var> {
        let w = g.p(self.weight);
        gcn_forward(g, a, x, w)
    }
}

/// Sliding window of the `L` most recent graph representations, ordered
/// oldest to newest.
#[derive(Clone, Debug)]
pub struct GraphSequence<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T: Clone> GraphSequence<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "sequence capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    /// Appends `item`. The first push after creation or [`clear`](Self::clear)
    /// fills every slot with it.
    pub fn push(&mut self, item: T) {
        if self.items.is_empty() {
            self.items.extend(std::iter::repeat_n(item, self.capacity));
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn newest(&self) -> Option<&T> {
        self.items.back()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.items.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gridworld::Detection;

    fn det(category: usize, depth: f64) -> Detection {
        Detection {
            category,
            bbox: [0.4, 0.4, 0.6, 0.6],
            confidence: 0.8,
            depth,
            label: category,
            appearance: 0,
        }
    }

    fn setup() -> (ParamSet, RelationGraph) {
        let mut params = ParamSet::new();
        let crg = RelationGraph::new(&mut params, &ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        (params, crg)
    }

    #[test]
    fn zero_dictionaries_give_uniform_rows() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::zeros(&[22, 32]));
        let a = compute_adjacency(&mut tape, e, e).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| (v - 1.0 / 22.0).abs() < 1e-15));
    }

    #[test]
    fn gcn_identity_case() {
        let mut tape = Tape::new();
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, 3.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let xv = tape.constant(x.clone());
        let i = tape.constant(Tensor::identity(3));
        let z = gcn_forward(&mut tape, i, xv, i).unwrap();
        assert_eq!(tape.value(z), &x);
        let zero = tape.constant(Tensor::zeros(&[3, 3]));
        let z = gcn_forward(&mut tape, i, zero, i).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_observation_has_zero_features() {
        let (params, crg) = setup();
        let mut g = Graph::new(&params);
        let obs = Observation { detections: vec![], patch: vec![0.0; 147], timestamp: 0 };
        let nf = crg.node_features(&mut g, &obs).unwrap();
        assert_eq!(g.shape(nf.x), &[22, 23]);
        assert!(g.value(nf.x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_detection_one_row() {
        let (params, crg) = setup();
        let mut g = Graph::new(&params);
        let obs = Observation { detections: vec![det(5, 2.0)], patch: vec![0.0; 147], timestamp: 0 };
        let nf = crg.node_features(&mut g, &obs).unwrap();
        let x = g.value(nf.x);
        let nonzero: Vec<usize> = (0..22).filter(|&r| x.row_slice(r).iter().any(|&v| v != 0.0)).collect();
        assert_eq!(nonzero, vec![5]);
        assert_eq!(&x.row_slice(5)[..6], &[0.4, 0.4, 0.6, 0.6, 0.8, 2.0]);
        assert_eq!(x.row_slice(5)[6], params.by_name("crg.label_embedding").unwrap().at(5, 0));
    }

    #[test]
    fn sequence_pads_and_evicts() {
        let mut seq = GraphSequence::new(4);
        seq.push(1);
        assert_eq!(seq.to_vec(), vec![1, 1, 1, 1]);
        for v in 2..=5 {
            seq.push(v);
        }
        assert_eq!(seq.to_vec(), vec![2, 3, 4, 5]);
        seq.clear();
        seq.push(9);
        assert_eq!(seq.to_vec(), vec![9; 4]);
    }
}

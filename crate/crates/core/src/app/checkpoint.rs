use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{Optimizer, ParameterStore};
use crate::pretrain::write_atomic;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 11] = b"CRGTSR-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter snapshot with optional Adam moments, stored at 32-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    /// Store version at save time.
    pub version: u64,
    pub tensors: Vec<(String, Tensor)>,
    /// Moments are in `tensors` order.
    pub adam: Option<AdamState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.fail(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn values(&mut self, shape: &[usize], what: &str) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.fail(format!("{what}: size overflow")))?, what)?;
        let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| self.fail(format!("{what}: {e}")))
    }
}

fn put_values(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet, adam: Option<&AdamState>, config_hash: u64, version: u64) -> Self {
        Self {
            config_hash,
            version,
            tensors: params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            adam: adam.cloned(),
        }
    }

    /// Current store contents; plain-SGD stores carry no optimizer state.
    pub fn from_store(store: &ParameterStore, config_hash: u64) -> Self {
        let (params, optimizer, version) = store.export();
        let adam = match &optimizer {
            Optimizer::Adam(state) => Some(state),
            Optimizer::Sgd { .. } => None,
        };
        Self::from_params(&params, adam, config_hash, version)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_values(&mut out, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                let c = state.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&v.to_bits().to_le_bytes());
                }
                out.extend_from_slice(&state.step.to_le_bytes());
                for t in state.m.iter().chain(&state.v) {
                    put_values(&mut out, t);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
            return Err(r.fail("bad magic"));
        }
        let format = r.u32("format version")?;
        if format != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported format version {format}")));
        }
        let config_hash = r.u64("config hash")?;
        let version = r.u64("store version")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for i in 0..count {
            let len = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| r.fail(format!("tensor {i}: name is not UTF-8")))?;
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(r.fail(format!("tensor `{name}` appears twice")));
            }
            let rank = r.u32(&format!("rank of `{name}`"))? as usize;
            if rank > 8 {
                return Err(r.fail(format!("tensor `{name}`: implausible rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u32(&format!("shape of `{name}`")).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let t = r.values(&shape, &format!("values of `{name}`"))?;
            tensors.push((name, t));
        }
        let adam = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64("adam lr")?,
                    beta1: r.f64("adam beta1")?,
                    beta2: r.f64("adam beta2")?,
                    eps: r.f64("adam eps")?,
                };
                let step = r.u64("adam step")?;
                let mut moments = Vec::with_capacity(2 * tensors.len());
                for which in ["m", "v"] {
                    for (name, t) in &tensors {
                        moments.push(r.values(t.shape(), &format!("adam {which} of `{name}`"))?);
                    }
                }
                let v = moments.split_off(tensors.len());
                Some(AdamState { config, step, m: moments, v })
            }
            f => return Err(r.fail(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config_hash, version, tensors, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn check_hash(&self, expected: u64) -> Result<()> {
        if self.config_hash != expected {
            return Err(Error::ConfigHash { expected, found: self.config_hash });
        }
        Ok(())
    }

    /// A copy of `template` with every value replaced from the checkpoint.
    /// The checkpoint must hold exactly the template's names and shapes.
    pub fn params_like(&self, template: &ParamSet) -> Result<ParamSet> {
        let fail = |message: String| Error::Checkpoint { path: "<checkpoint>".into(), message };
        for (name, t) in &self.tensors {
            let found = template.by_name(name).ok_or_else(|| fail(format!("unknown tensor `{name}`")))?;
            if found.shape() != t.shape() {
                return Err(fail(format!(
                    "tensor `{name}`: shape {:?} does not match model shape {:?}",
                    t.shape(),
                    found.shape()
                )));
            }
        }
        let mut params = template.clone();
        for id in template.ids() {
            let name = template.name(id);
            let t = self.tensor(name).ok_or_else(|| fail(format!("missing tensor `{name}`")))?;
            params.set(id, t.clone())?;
        }
        Ok(params)
    }

    /// Adam moments reordered to `params` order, when present.
    fn adam_like(&self, params: &ParamSet) -> Option<AdamState> {
        let state = self.adam.as_ref()?;
        let index = |name: &str| self.tensors.iter().position(|(n, _)| n == name);
        let order: Option<Vec<usize>> = params.iter().map(|(_, n, _)| index(n)).collect();
        let order = order?;
        Some(AdamState {
            config: state.config,
            step: state.step,
            m: order.iter().map(|&i| state.m[i].clone()).collect(),
            v: order.iter().map(|&i| state.v[i].clone()).collect(),
        })
    }

    /// Replaces the contents of `store` with this checkpoint. Nothing
    /// changes unless every tensor matches the store's layout. Optimizer
    /// state is restored when both sides use Adam; otherwise the store
    /// keeps its optimizer.
    pub fn restore_into(&self, store: &ParameterStore) -> Result<()> {
        let (template, optimizer, _) = store.export();
        let params = self.params_like(&template)?;
        let optimizer = match (optimizer, self.adam_like(&params)) {
            (Optimizer::Adam(_), Some(state)) => Optimizer::Adam(state),
            (other, _) => other,
        };
        store.restore(params, optimizer, self.version);
        Ok(())
    }
}

/// Writes the store contents atomically.
pub fn save_checkpoint(path: &Path, store: &ParameterStore, config_hash: u64) -> Result<()> {
    Checkpoint::from_store(store, config_hash).save(path)
}

/// Loads `path`, checks its hash against `expected_hash` and restores it
/// into `store`. On any error the store is left unchanged.
pub fn load_checkpoint(path: &Path, store: &ParameterStore, expected_hash: u64) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_hash(expected_hash)?;
    ckpt.restore_into(store).map_err(|e| match e {
        Error::Checkpoint { message, .. } => Error::Checkpoint { path: path.to_path_buf(), message },
        other => other,
    })?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.register("a", Tensor::new(vec![2, 3], vec![0.1, -2.0, 3.5, 1e-3, 0.0, 7.25]).unwrap());
        p.register("b", Tensor::row(&[1.0, 2.0]));
        p
    }

    #[test]
    fn bytes_round_trip() {
        let p = params();
        let mut adam = AdamState::new(&p, AdamConfig::with_lr(0.01));
        adam.step = 3;
        adam.m[1] = Tensor::row(&[0.5, -0.25]);
        let c = Checkpoint::from_params(&p, Some(&adam), 77, 12);
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.version, 12);
        assert_eq!(back.adam.as_ref().unwrap().m[1].data(), &[0.5, -0.25]);
        assert_eq!(back.adam.unwrap().config.lr, 0.01);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = Checkpoint::from_params(&params(), None, 1, 0).to_bytes();
        for n in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..n], Path::new("x")).is_err(), "prefix {n}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("x")).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let mut other = ParamSet::new();
        other.register("a", Tensor::zeros(&[3, 2]));
        other.register("b", Tensor::zeros(&[1, 2]));
        let c = Checkpoint::from_params(&params(), None, 1, 0);
        let e = c.params_like(&other).unwrap_err().to_string();
        assert!(e.contains("`a`"), "{e}");
    }
}

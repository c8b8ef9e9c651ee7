use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{scaled_dot_attention, AttentionMask, Graph, ParamId, ParamSet, Tape, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Multi-head attention without projections: the columns of `q`, `k` and
/// `v` are split evenly into `heads` groups, each group attends on its own,
/// and the head outputs are concatenated back. Returns the output and one
/// probability matrix per head.
pub fn multi_head_core(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<(Var, Vec<Var>)> {
    if heads == 1 {
        let att = scaled_dot_attention(tape, q, k, v, mask)?;
        return Ok((att.output, vec![att.probs]));
    }
    let (dq, dv) = (tape.shape(q)[1], tape.shape(v)[1]);
    if heads == 0 || dq % heads != 0 || dv % heads != 0 {
        return Err(Error::InvalidArgument(format!("{heads} heads do not divide widths {dq} and {dv}")));
    }
    let (hq, hv) = (dq / heads, dv / heads);
    let mut outputs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * hq, hq)?;
        let kh = tape.slice(k, 1, h * hq, hq)?;
        let vh = tape.slice(v, 1, h * hv, hv)?;
        let att = scaled_dot_attention(tape, qh, kh, vh, mask)?;
        outputs.push(att.output);
        probs.push(att.probs);
    }
    Ok((tape.concat(&outputs, 1)?, probs))
}

fn weight<R: Rng + ?Sized>(params: &mut ParamSet, name: String, rows: usize, cols: usize, rng: &mut R) -> ParamId {
    params.register(name, Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng))
}

/// `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = weight(params, format!("{name}.weight"), input, output, rng);
        let bias = bias.then(|| params.register(format!("{name}.bias"), Tensor::zeros(&[1, output])));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.p(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.p(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with a learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        let gain = params.register(format!("{name}.gain"), Tensor::ones(&[1, width]));
        let shift = params.register(format!("{name}.shift"), Tensor::zeros(&[1, width]));
        Self { gain, shift }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.layer_norm(x, LN_EPS)?;
        let gain = g.p(self.gain);
        let shift = g.p(self.shift);
        let y = g.mul_row(y, gain)?;
        g.add_row(y, shift)
    }
}

/// Projected multi-head attention.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            query: weight(params, format!("{name}.query"), width, width, rng),
            key: weight(params, format!("{name}.key"), width, width, rng),
            value: weight(params, format!("{name}.value"), width, width, rng),
            output: weight(params, format!("{name}.output"), width, width, rng),
            heads,
        }
    }

    /// Queries from `x`, keys and values from `memory`.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Vec<Var>)> {
        let (wq, wk, wv, wo) = (g.p(self.query), g.p(self.key), g.p(self.value), g.p(self.output));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let (heads, probs) = multi_head_core(g, q, k, v, self.heads, mask)?;
        Ok((g.matmul(heads, wo)?, probs))
    }
}

/// Two-layer ReLU perceptron with hidden width twice the model width.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(params, &format!("{name}.hidden"), width, 2 * width, true, rng),
            output: Linear::new(params, &format!("{name}.output"), 2 * width, width, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}

/// Pre-norm block: `x + MHA(LN(x), memory)` then `x + FF(LN(x))`.
///
/// With `memory = None` the block attends over its own normalized input.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBlock {
    pub norm_attention: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm_attention: LayerNorm::new(params, &format!("{name}.norm_attention"), width),
            attention: MultiHeadAttention::new(params, &format!("{name}.attention"), width, heads, rng),
            norm_ff: LayerNorm::new(params, &format!("{name}.norm_ff"), width),
            ff: FeedForward::new(params, &format!("{name}.ff"), width, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Option<Var>,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Vec<Var>)> {
        let normed = self.norm_attention.forward(g, x)?;
        let (att, probs) = self.attention.forward(g, normed, memory.unwrap_or(normed), mask)?;
        let x = g.add(x, att)?;
        let normed = self.norm_ff.forward(g, x)?;
        let ff = self.ff.forward(g, normed)?;
        Ok((g.add(x, ff)?, probs))
    }
}

/// Pre-norm decoder block: self-attention, cross-attention to `memory`,
/// feed-forward, each residual.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub norm_self: LayerNorm,
    pub self_attention: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm_self: LayerNorm::new(params, &format!("{name}.norm_self"), width),
            self_attention: MultiHeadAttention::new(params, &format!("{name}.self_attention"), width, heads, rng),
            norm_cross: LayerNorm::new(params, &format!("{name}.norm_cross"), width),
            cross_attention: MultiHeadAttention::new(params, &format!("{name}.cross_attention"), width, heads, rng),
            norm_ff: LayerNorm::new(params, &format!("{name}.norm_ff"), width),
            ff: FeedForward::new(params, &format!("{name}.ff"), width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var) -> Result<(Var, Vec<Var>)> {
        let normed = self.norm_self.forward(g, x)?;
        let (att, mut probs) = self.self_attention.forward(g, normed, normed, None)?;
        let x = g.add(x, att)?;
        let normed = self.norm_cross.forward(g, x)?;
        let (att, cross) = self.cross_attention.forward(g, normed, memory, None)?;
        probs.extend(cross);
        let x = g.add(x, att)?;
        let normed = self.norm_ff.forward(g, x)?;
        let ff = self.ff.forward(g, normed)?;
        Ok((g.add(x, ff)?, probs))
    }
}

/// `relu(D·x·U) + x` with `D = row-softmax((x·P)(x·P)ᵀ/√C)`.
pub fn sdgcn(tape: &mut Tape, x: Var, p: Var, u: Var) -> Result<Var> {
    let width = tape.shape(x)[1];
    let proj = tape.matmul(x, p)?;
    let proj_t = tape.transpose(proj)?;
    let scores = tape.matmul(proj, proj_t)?;
    let scores = tape.scale(scores, 1.0 / (width as f64).sqrt());
    let d = tape.softmax(scores, 1)?;
    let dx = tape.matmul(d, x)?;
    let dxu = tape.matmul(dx, u)?;
    let update = tape.relu(dxu);
    tape.add(update, x)
}

/// Spatial dynamic GCN layer.
#[derive(Clone, Copy, Debug)]
pub struct Sdgcn {
    pub projection: ParamId,
    pub update: ParamId,
}

impl Sdgcn {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            projection: weight(params, format!("{name}.projection"), width, width, rng),
            update: weight(params, format!("{name}.update"), width, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let p = g.p(self.projection);
        let u = g.p(self.update);
        sdgcn(g, x, p, u)
    }
}

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Additive logit penalty for masked attention positions.
pub const MASK_PENALTY: f64 = -1e30;

/// Boolean `rows × cols` attention mask; `true` marks an allowed position.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Shape { op: "attention_mask", lhs: vec![rows, cols], rhs: vec![allowed.len()] });
        }
        Ok(Self { rows, cols, allowed })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, allowed }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }

    fn penalty(&self) -> Tensor {
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { MASK_PENALTY }).collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("mask extents are positive")
    }
}

/// Output and probability matrix of one attention evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub output: Var,
    pub probs: Var,
}

/// `softmax(q·kᵀ/√d + penalty)·v`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Attention> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Shape { op: "scaled_dot_attention", lhs: qs, rhs: ks });
    }
    if ks[0] != vs[0] {
        return Err(Error::Shape { op: "scaled_dot_attention", lhs: ks, rhs: vs });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    if let Some(mask) = mask {
        if mask.shape() != [qs[0], ks[0]] {
            return Err(Error::Shape { op: "scaled_dot_attention", lhs: vec![qs[0], ks[0]], rhs: mask.shape().to_vec() });
        }
        if let Some(row) = (0..mask.rows).find(|&r| (0..mask.cols).all(|c| !mask.allowed(r, c))) {
            return Err(Error::DegenerateAttention { row });
        }
        let penalty = tape.constant(mask.penalty());
        scores = tape.add(scores, penalty)?;
    }
    let probs = tape.softmax(scores, 1)?;
    let output = tape.matmul(probs, v)?;
    Ok(Attention { output, probs })
}

/// Weights of one LSTM cell. Gate columns are ordered input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// `d_in × 4·d_h`
    pub w_input: Var,
    /// `d_h × 4·d_h`
    pub w_hidden: Var,
    /// `1 × 4·d_h`
    pub bias: Var,
}

/// One LSTM step on row vectors. Returns `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, params: &LstmParams) -> Result<(Var, Var)> {
    let d_h = tape.shape(h_prev)[1];
    let expected = [1, 4 * d_h];
    if tape.shape(params.bias) != expected || tape.shape(c_prev) != [1, d_h] {
        return Err(Error::Shape {
            op: "lstm_cell",
            lhs: tape.shape(params.bias).to_vec(),
            rhs: tape.shape(c_prev).to_vec(),
        });
    }
    let xi = tape.matmul(x, params.w_input)?;
    let hh = tape.matmul(h_prev, params.w_hidden)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add(pre, params.bias)?;
    let gate = |tape: &mut Tape, k: usize| tape.slice(pre, 1, k * d_h, d_h);
    let i = gate(tape, 0)?;
    let f = gate(tape, 1)?;
    let g = gate(tape, 2)?;
    let o = gate(tape, 3)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let ct = tape.tanh(c);
    let h = tape.mul(o, ct)?;
    Ok((h, c))
}

/// `−log softmax(logits)[target]` for a `1 × n` logit row.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    let classes = tape.value(logits).len();
    if target >= classes {
        return Err(Error::TargetOutOfRange { target, classes });
    }
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.pick(logp, target)?;
    Ok(tape.scale(picked, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_attention_returns_value() {
        let mut t = Tape::new();
        let r = t.constant(Tensor::row(&[0.3, -1.2, 2.0]));
        let a = scaled_dot_attention(&mut t, r, r, r, None).unwrap();
        assert_eq!(t.value(a.output), t.value(r));
    }

    #[test]
    fn identical_keys_average_values() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::row(&[1.0, 2.0]));
        let k = t.constant(Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap());
        let a = scaled_dot_attention(&mut t, q, k, v, None).unwrap();
        assert_eq!(t.value(a.output).data(), &[2.0, 4.0]);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::zeros(&[2, 2]));
        let mask = AttentionMask::from_fn(2, 2, |r, _| r == 0);
        let err = scaled_dot_attention(&mut t, q, q, q, Some(&mask)).unwrap_err();
        assert!(matches!(err, Error::DegenerateAttention { row: 1 }));
    }

    #[test]
    fn lstm_zero_state_and_params_give_zero_hidden() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[1.0, -2.0, 0.5]));
        let h = t.constant(Tensor::zeros(&[1, 4]));
        let c = t.constant(Tensor::zeros(&[1, 4]));
        let p = LstmParams {
            w_input: t.constant(Tensor::zeros(&[3, 16])),
            w_hidden: t.constant(Tensor::zeros(&[4, 16])),
            bias: t.constant(Tensor::zeros(&[1, 16])),
        };
        let (h1, _) = lstm_cell(&mut t, x, h, c, &p).unwrap();
        assert!(t.value(h1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0]));
        let h = t.constant(Tensor::zeros(&[1, 2]));
        let c = t.constant(Tensor::row(&[0.7, -0.4]));
        // input gate closed, forget gate open
        let bias = Tensor::row(&[-1e3, -1e3, 1e3, 1e3, 0.0, 0.0, 0.0, 0.0]);
        let p = LstmParams {
            w_input: t.constant(Tensor::zeros(&[1, 8])),
            w_hidden: t.constant(Tensor::zeros(&[2, 8])),
            bias: t.constant(bias),
        };
        let (_, c1) = lstm_cell(&mut t, x, h, c, &p).unwrap();
        assert_eq!(t.value(c1).data(), &[0.7, -0.4]);
    }

    #[test]
    fn cross_entropy_uniform_and_dominant() {
        let mut t = Tape::new();
        let logits = t.constant(Tensor::zeros(&[1, 6]));
        let l = cross_entropy(&mut t, logits, 2).unwrap();
        assert!((t.value(l).item() - 6f64.ln()).abs() < 1e-12);

        let logits = t.constant(Tensor::row(&[60.0, 0.0, 0.0]));
        let l = cross_entropy(&mut t, logits, 0).unwrap();
        assert!(t.value(l).item() < 1e-20);

        assert!(matches!(cross_entropy(&mut t, logits, 3), Err(Error::TargetOutOfRange { .. })));
    }
}

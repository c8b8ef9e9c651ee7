use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamSet, Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so that gradients that are
/// zero on both sides compare by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Outcome of comparing backward gradients with central differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// Label and flat index of the entry with the largest relative error.
    pub worst: Option<(String, usize)>,
}

impl GradCheck {
    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.max_abs_error = self.max_abs_error.max((analytic - numeric).abs());
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((label.to_string(), index));
        }
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradCheck) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.worst = other.worst;
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
    }
}

/// Checks the gradient of the scalar `f(inputs)` with respect to every
/// entry of every input tensor.
pub fn check_gradients(
    inputs: &[Tensor],
    eps: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let mut report = GradCheck::default();
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            values[i].data_mut()[k] = x + eps;
            let up = eval(&values)?;
            values[i].data_mut()[k] = x - eps;
            let down = eval(&values)?;
            values[i].data_mut()[k] = x;
            report.record(&format!("input {i}"), k, analytic.data()[k], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks the gradient of the scalar `f` with respect to the parameters.
/// At most `per_tensor` randomly chosen entries of each parameter tensor
/// are perturbed.
pub fn check_param_gradients<R: Rng + ?Sized>(
    params: &ParamSet,
    eps: f64,
    per_tensor: usize,
    rng: &mut R,
    f: impl Fn(&mut Graph) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::inference(p);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(params);
    let root = f(&mut g)?;
    g.backward(root)?;
    let grads = g.gradients();
    let mut report = GradCheck::default();
    let mut perturbed = params.clone();
    for id in params.ids() {
        let len = params.get(id).len();
        let zeros = Tensor::zeros(params.get(id).shape());
        let analytic = grads.get(id).unwrap_or(&zeros);
        for k in sample(rng, len, per_tensor.min(len)) {
            let x = params.get(id).data()[k];
            perturbed.get_mut(id).data_mut()[k] = x + eps;
            let up = eval(&perturbed)?;
            perturbed.get_mut(id).data_mut()[k] = x - eps;
            let down = eval(&perturbed)?;
            perturbed.get_mut(id).data_mut()[k] = x;
            report.record(params.name(id), k, analytic.data()[k], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient_matches() {
        let a = Tensor::row(&[1.5, -2.0]);
        let b = Tensor::row(&[0.5, 3.0]);
        let r = check_gradients(&[a, b], 1e-6, |t, v| {
            let m = t.mul(v[0], v[1])?;
            Ok(t.sum(m))
        })
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence from backward but not from the values
        let r = check_gradients(&[Tensor::row(&[2.0])], 1e-6, |t, v| {
            let d = t.detach(v[0]);
            let m = t.mul(v[0], d)?;
            Ok(t.sum(m))
        })
        .unwrap();
        assert!(r.max_rel_error > 0.4);
    }
}

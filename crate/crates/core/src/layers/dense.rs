use super::{check_len, hidden_state, DualWeights, LayerError, LayerState, Result, Synapses};
use crate::netspec::FeedbackRule;
use crate::tensor::Tensor;

/// Fully connected `n_out x n_in` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseGeometry {
    pub n_in: usize,
    pub n_out: usize,
}

impl DenseGeometry {
    pub fn of(w: &DualWeights) -> Result<Self> {
        match *w.w().shape() {
            [n_out, n_in] => Ok(DenseGeometry { n_in, n_out }),
            _ => Err(LayerError::Invalid(format!(
                "dense weights must be a matrix, got shape {:?}",
                w.w().shape()
            ))),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.n_out, self.n_in]
    }
}

impl Synapses for DenseGeometry {
    fn n_in(&self) -> usize {
        self.n_in
    }

    fn n_out(&self) -> usize {
        self.n_out
    }

    fn n_weights(&self) -> usize {
        self.n_in * self.n_out
    }

    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64]) {
        for (i, hi) in h.iter_mut().enumerate() {
            let row = &w[i * self.n_in..(i + 1) * self.n_in];
            *hi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn route(&self, f: &[f64], delta: &[f64], g_in: &mut [f64]) {
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &f[i * self.n_in..(i + 1) * self.n_in];
            for (g, &v) in g_in.iter_mut().zip(row) {
                *g += d * v;
            }
        }
    }

    fn accumulate(&self, delta: &[f64], x: &[f64], g: &mut [f64]) {
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut g[i * self.n_in..(i + 1) * self.n_in];
            for (gv, &xv) in row.iter_mut().zip(x) {
                *gv += d * xv;
            }
        }
    }
}

fn dense_forward(w: &DualWeights, x: &Tensor, linear: bool) -> Result<LayerState> {
    let g = DenseGeometry::of(w)?;
    check_len("full_forward", g.n_in, x.len())?;
    let mut h = vec![0.0; g.n_out];
    g.forward(w.w().data(), x.data(), &mut h);
    hidden_state(x, h, vec![g.n_out], linear)
}

/// Hidden dense layer: `h = W x`, `x_out = saturate(h)`, gate from `h`.
pub fn full_forward(w: &DualWeights, x: &Tensor) -> Result<LayerState> {
    dense_forward(w, x, false)
}

/// Linear read-out layer: `x_out = h`, no gate.
pub fn output_forward(w: &DualWeights, x: &Tensor) -> Result<LayerState> {
    dense_forward(w, x, true)
}

/// Delta of the layer below a dense layer: `gate_below * (F delta_above)` with
/// `F = W^t` under BP and `F = R` otherwise.
pub fn full_feedback(
    w_above: &DualWeights,
    below: &LayerState,
    delta_above: &Tensor,
    rule: FeedbackRule,
) -> Result<Tensor> {
    let g = DenseGeometry::of(w_above)?;
    if below.x_out.is_empty() {
        return Err(LayerError::Sequencing("feedback requested before the forward pass"));
    }
    check_len("full_feedback (state)", g.n_in, below.x_out.len())?;
    check_len("full_feedback (delta)", g.n_out, delta_above.len())?;
    let mut out = vec![0.0; g.n_in];
    g.route(w_above.route_matrix(rule).data(), delta_above.data(), &mut out);
    below.gated(&mut out);
    Ok(Tensor::new(below.x_out.shape().to_vec(), out)?)
}

/// Single-sample update `W += eta * delta x_in^t` (and `R` per `rule`).
pub fn hebbian_update(w: &mut DualWeights, state: &LayerState, eta: f64, rule: FeedbackRule) -> Result<()> {
    let g = DenseGeometry::of(w)?;
    let delta = state
        .delta
        .as_ref()
        .ok_or(LayerError::Sequencing("update requested before the delta was computed"))?;
    check_len("hebbian_update (delta)", g.n_out, delta.len())?;
    check_len("hebbian_update (x_in)", g.n_in, state.x_in.len())?;
    let mut acc = vec![0.0; g.n_weights()];
    g.accumulate(delta.data(), state.x_in.data(), &mut acc);
    w.apply_increment(&acc, eta, rule)
}

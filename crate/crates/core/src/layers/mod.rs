//! Forward and feedback transforms for every layer kind.
//!
//! Parametric layers (dense, conv, localconv) share [`DualWeights`]. The
//! feedback matrix `R` (shape `n_in x n_out`) is stored internally in the
//! layout of `W`, i.e. as `R^t`. That way the BP route (through `W`) and the
//! URFB route (through `R`) run the exact same kernel, and with `R(0) = W(0)^t`
//! the two rules stay bit-identical.
//!
//! All parametric kernels implement [`Synapses`]:
//!
//! * `forward`: `h = W x`
//! * `route`: `g_in += F^t-routing of delta`, where `F` is `W` (BP) or `R^t`
//! * `accumulate`: `G += delta x^t` restricted to the layer's support

mod conv;
mod dense;
mod dropout;
mod localconv;
mod pool;
mod sum;

pub use conv::{conv_feedback, conv_forward, conv_update, ConvGeometry};
pub use dense::{full_feedback, full_forward, hebbian_update, output_forward, DenseGeometry};
pub use dropout::{draw_drop_mask, dropout_feedback, dropout_forward, dropout_forward_with_mask};
pub use localconv::{localconv_feedback, localconv_forward, localconv_update, LocalConvGeometry, LocalConvWeights};
pub use pool::{maxpool_feedback, maxpool_forward, PoolGeometry};
pub use sum::{sum_feedback, sum_forward};

use thiserror::Error;

use crate::netspec::FeedbackRule;
use crate::tensor::{gate_open, Rng, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{op}: expected {expected} values, got {got}")]
    Length {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequencing violation: {0}")]
    Sequencing(&'static str),
    #[error("entry ({out_index}, {in_index}) lies outside the connectivity support")]
    OutsideSupport { out_index: usize, in_index: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, LayerError>;

pub(crate) fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LayerError::Length { op, expected, got });
    }
    Ok(())
}

/// A weight-carrying connectivity pattern.
pub trait Synapses {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    /// Number of stored weights.
    fn n_weights(&self) -> usize;
    /// `h = W x`; `h` is overwritten.
    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64]);
    /// `g_in += F^t delta` with `F` in the layout of `W`.
    fn route(&self, f: &[f64], delta: &[f64], g_in: &mut [f64]);
    /// `g += delta x^t` over the support.
    fn accumulate(&self, delta: &[f64], x: &[f64], g: &mut [f64]);
}

/// Feedforward weights `W`, feedback weights `R`, optional fixed masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    w: Tensor,
    /// `R^t`, same shape as `w`.
    rt: Tensor,
    mask_w: Option<Tensor>,
    /// Mask of `R`, stored in the layout of `w`.
    mask_rt: Option<Tensor>,
}

/// Transpose in the generalized sense used for weights: swap the two leading
/// axes (matrices, filter banks), identity on rank-1 entry lists.
pub fn weight_transpose(t: &Tensor) -> Result<Tensor> {
    if t.rank() >= 2 {
        Ok(t.swap_leading_axes()?)
    } else {
        Ok(t.clone())
    }
}

/// Shape of `R` given the shape of `W`.
pub fn feedback_shape(w_shape: &[usize]) -> Vec<usize> {
    let mut s = w_shape.to_vec();
    if s.len() >= 2 {
        s.swap(0, 1);
    }
    s
}

fn binary(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

fn apply_mask(t: &mut Tensor, mask: &Option<Tensor>) {
    if let Some(m) = mask {
        for (v, &k) in t.data_mut().iter_mut().zip(m.data()) {
            if k == 0.0 {
                *v = 0.0;
            }
        }
    }
}

impl DualWeights {
    /// `r` has the shape of `W` transposed.
    pub fn new(w: Tensor, r: Tensor) -> Result<Self> {
        let want = feedback_shape(w.shape());
        if r.shape() != want.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "DualWeights::new",
                left: want,
                right: r.shape().to_vec(),
            }
            .into());
        }
        let rt = weight_transpose(&r)?;
        Ok(DualWeights {
            w,
            rt,
            mask_w: None,
            mask_rt: None,
        })
    }

    /// `R = W^t`.
    pub fn tied(w: Tensor) -> Self {
        DualWeights {
            rt: w.clone(),
            w,
            mask_w: None,
            mask_rt: None,
        }
    }

    /// Attach masks (in the layouts of `W` and `R`); masked entries are zeroed.
    pub fn with_masks(mut self, mask_w: Option<Tensor>, mask_r: Option<Tensor>) -> Result<Self> {
        if let Some(m) = &mask_w {
            if m.shape() != self.w.shape() || !binary(m) {
                return Err(LayerError::Invalid("maskW must be binary with the shape of W".into()));
            }
        }
        let mask_rt = match mask_r {
            Some(m) => {
                if m.shape() != feedback_shape(self.w.shape()).as_slice() || !binary(&m) {
                    return Err(LayerError::Invalid("maskR must be binary with the shape of R".into()));
                }
                Some(weight_transpose(&m)?)
            }
            None => None,
        };
        self.mask_w = mask_w;
        self.mask_rt = mask_rt;
        apply_mask(&mut self.w, &self.mask_w);
        apply_mask(&mut self.rt, &self.mask_rt);
        Ok(self)
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    /// `R` in its own layout (`n_in x n_out`).
    pub fn r(&self) -> Tensor {
        weight_transpose(&self.rt).expect("rank checked at construction")
    }

    /// `R^t`, laid out like `W`.
    pub fn rt(&self) -> &Tensor {
        &self.rt
    }

    pub fn mask_w(&self) -> Option<&Tensor> {
        self.mask_w.as_ref()
    }

    pub fn mask_r(&self) -> Option<Tensor> {
        self.mask_rt.as_ref().map(|m| weight_transpose(m).expect("rank checked"))
    }

    /// The matrix the feedback sweep routes through under `rule`.
    pub fn route_matrix(&self, rule: FeedbackRule) -> &Tensor {
        match rule {
            FeedbackRule::Bp => &self.w,
            FeedbackRule::Frfb | FeedbackRule::Urfb => &self.rt,
        }
    }

    /// Replace `W` (mask re-applied); under BP the caller decides on `R`.
    pub fn set_w(&mut self, w: Tensor) -> Result<()> {
        if w.shape() != self.w.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_w",
                left: self.w.shape().to_vec(),
                right: w.shape().to_vec(),
            }
            .into());
        }
        self.w = w;
        apply_mask(&mut self.w, &self.mask_w);
        Ok(())
    }

    pub fn set_r(&mut self, r: Tensor) -> Result<()> {
        if r.shape() != feedback_shape(self.w.shape()).as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "set_r",
                left: feedback_shape(self.w.shape()),
                right: r.shape().to_vec(),
            }
            .into());
        }
        self.rt = weight_transpose(&r)?;
        apply_mask(&mut self.rt, &self.mask_rt);
        Ok(())
    }

    /// Apply an accumulated Hebbian increment `G` (layout of `W`):
    /// `W += scale * G` through maskW; URFB also `R += scale * G^t` through
    /// maskR; FRFB leaves `R`; BP re-ties `R = W^t`.
    pub fn apply_increment(&mut self, g: &[f64], scale: f64, rule: FeedbackRule) -> Result<()> {
        check_len("apply_increment", self.w.len(), g.len())?;
        add_masked(self.w.data_mut(), g, scale, self.mask_w.as_ref());
        match rule {
            FeedbackRule::Urfb => add_masked(self.rt.data_mut(), g, scale, self.mask_rt.as_ref()),
            FeedbackRule::Frfb => {}
            FeedbackRule::Bp => self.rt = self.w.clone(),
        }
        if !self.w.is_finite() || !self.rt.is_finite() {
            return Err(TensorError::NonFinite("apply_increment").into());
        }
        Ok(())
    }

    /// Pearson correlation of `W` and `R^t`, masked entries excluded.
    pub fn alignment(&self) -> Result<f64> {
        let keep = |i: usize| {
            self.mask_w.as_ref().is_none_or(|m| m.data()[i] != 0.0)
                && self.mask_rt.as_ref().is_none_or(|m| m.data()[i] != 0.0)
        };
        if self.mask_w.is_none() && self.mask_rt.is_none() {
            return Ok(crate::tensor::pearson_slices(self.w.data(), self.rt.data())?);
        }
        let (a, b): (Vec<f64>, Vec<f64>) = (0..self.w.len())
            .filter(|&i| keep(i))
            .map(|i| (self.w.data()[i], self.rt.data()[i]))
            .unzip();
        Ok(crate::tensor::pearson_slices(&a, &b)?)
    }
}

fn add_masked(dst: &mut [f64], g: &[f64], scale: f64, mask: Option<&Tensor>) {
    match mask {
        None => {
            for (d, &v) in dst.iter_mut().zip(g) {
                *d += scale * v;
            }
        }
        Some(m) => {
            for ((d, &v), &k) in dst.iter_mut().zip(g).zip(m.data()) {
                if k != 0.0 {
                    *d += scale * v;
                }
            }
        }
    }
}

/// Draw independent masks for `W` and `R`, zeroing each entry with
/// probability `fraction`, and apply them. Masks stay fixed afterwards.
pub fn prune(w: DualWeights, fraction: f64, rng: &mut Rng) -> Result<DualWeights> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(LayerError::Invalid(format!("prune fraction {fraction} not in [0,1)")));
    }
    let mut draw = |shape: Vec<usize>| {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.uniform() < fraction { 0.0 } else { 1.0 })
            .collect();
        Tensor::new(shape, data).expect("length matches")
    };
    let mw = draw(w.w.shape().to_vec());
    let mr = draw(feedback_shape(w.w.shape()));
    w.with_masks(Some(mw), Some(mr))
}

/// Per-layer, per-sample cache of the forward pass plus the feedback activity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerState {
    pub x_in: Tensor,
    pub x_out: Tensor,
    /// Pre-activation, for parametric layers.
    pub h: Option<Tensor>,
    /// Binary feedback gate; `None` for layers that pass feedback ungated.
    pub gate: Option<Tensor>,
    /// Feedback activity of this layer's units, once computed.
    pub delta: Option<Tensor>,
    pub pool_argmax: Option<Vec<Option<usize>>>,
    pub drop_mask: Option<Tensor>,
}

impl LayerState {
    /// Multiply incoming feedback by the gate (if any).
    pub fn gated(&self, g: &mut [f64]) {
        if let Some(gate) = &self.gate {
            for (v, &k) in g.iter_mut().zip(gate.data()) {
                if k == 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// State of a hidden parametric layer after its forward map.
pub(crate) fn hidden_state(x_in: &Tensor, h: Vec<f64>, out_shape: Vec<usize>, linear: bool) -> Result<LayerState> {
    let h = Tensor::new(out_shape.clone(), h)?;
    let (x_out, gate) = if linear {
        (h.clone(), None)
    } else {
        let gate = h.map(|v| if gate_open(v) { 1.0 } else { 0.0 });
        (h.saturate(), Some(gate))
    };
    Ok(LayerState {
        x_in: x_in.clone(),
        x_out,
        h: Some(h),
        gate,
        ..LayerState::default()
    })
}

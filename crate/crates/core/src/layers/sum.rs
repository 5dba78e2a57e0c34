use super::{LayerState, Result};
use crate::tensor::Tensor;

/// Elementwise `a + b`, no nonlinearity.
pub fn sum_forward(a: &Tensor, b: &Tensor) -> Result<LayerState> {
    let x_out = a.add(b)?;
    Ok(LayerState {
        x_in: a.clone(),
        x_out,
        ..LayerState::default()
    })
}

/// Both branches receive the incoming delta unchanged.
pub fn sum_feedback(delta_above: &Tensor) -> (Tensor, Tensor) {
    (delta_above.clone(), delta_above.clone())
}

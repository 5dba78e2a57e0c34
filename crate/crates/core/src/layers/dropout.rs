use super::{check_len, LayerError, LayerState, Result};
use crate::tensor::{Rng, Tensor};

/// Binary keep-mask zeroing each unit with probability `p`.
pub fn draw_drop_mask(rng: &mut Rng, shape: &[usize], p: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(LayerError::Invalid(format!("drop probability {p} not in [0,1)")));
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.uniform() < p { 0.0 } else { 1.0 }).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// Training-mode dropout with a freshly drawn mask. Kept units are not
/// rescaled.
pub fn dropout_forward(x: &Tensor, p: f64, rng: &mut Rng) -> Result<LayerState> {
    let mask = draw_drop_mask(rng, x.shape(), p)?;
    dropout_forward_with_mask(x, mask)
}

pub fn dropout_forward_with_mask(x: &Tensor, mask: Tensor) -> Result<LayerState> {
    check_len("dropout_forward", x.len(), mask.len())?;
    let x_out = x.mul(&mask.clone().reshape(x.shape().to_vec())?)?;
    Ok(LayerState {
        x_in: x.clone(),
        x_out,
        drop_mask: Some(mask),
        ..LayerState::default()
    })
}

pub fn dropout_feedback(state: &LayerState, delta_above: &Tensor) -> Result<Tensor> {
    let mask = state
        .drop_mask
        .as_ref()
        .ok_or(LayerError::Sequencing("dropout feedback before its forward pass"))?;
    check_len("dropout_feedback", mask.len(), delta_above.len())?;
    let data = delta_above.data().iter().zip(mask.data()).map(|(d, m)| d * m).collect();
    Ok(Tensor::new(state.x_in.shape().to_vec(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let s = dropout_forward(&x, 0.0, &mut rng).unwrap();
        assert_eq!(s.x_out, x);
        let d = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout_feedback(&s, &d).unwrap(), d);
    }

    #[test]
    fn kept_fraction_is_binomial() {
        let mut rng = Rng::new(2);
        let x = Tensor::filled(vec![10_000], 1.0);
        let s = dropout_forward(&x, 0.8, &mut rng).unwrap();
        let kept = s.x_out.sum() / 10_000.0;
        assert!((kept - 0.2).abs() <= 0.02, "kept={kept}");
    }

    #[test]
    fn dropped_units_pass_no_feedback() {
        let mask = Tensor::new(vec![3], vec![1.0, 0.0, 1.0]).unwrap();
        let s = dropout_forward_with_mask(&Tensor::filled(vec![3], 0.5), mask).unwrap();
        let d = dropout_feedback(&s, &Tensor::filled(vec![3], 7.0)).unwrap();
        assert_eq!(d.data(), &[7.0, 0.0, 7.0]);
        assert_eq!(s.x_out.data(), &[0.5, 0.0, 0.5]);
    }
}

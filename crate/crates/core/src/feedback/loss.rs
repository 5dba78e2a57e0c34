use crate::netspec::LossKind;
use crate::tensor::Tensor;

/// Output delta, `-dL/dx` at the read-out layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDelta {
    pub values: Tensor,
    pub class: usize,
}

/// `max(1 - x_c, 0) + mu * sum_{i != c} max(1 + x_i, 0)`.
pub fn hinge_loss(x: &[f64], c: usize, mu: f64) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i == c { (1.0 - v).max(0.0) } else { mu * (1.0 + v).max(0.0) })
        .sum()
}

/// `+1` at `c` while `x_c <= 1`; `-mu` at `i != c` while `x_i >= -1`; else 0.
pub fn hinge_delta(x: &[f64], c: usize, mu: f64, out: &mut [f64]) {
    for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = if i == c {
            if v <= 1.0 {
                1.0
            } else {
                0.0
            }
        } else if v >= -1.0 {
            -mu
        } else {
            0.0
        };
    }
}

pub fn hinge_output_delta(x: &Tensor, c: usize, mu: f64) -> OutputDelta {
    let mut v = vec![0.0; x.len()];
    hinge_delta(x.data(), c, mu, &mut v);
    OutputDelta {
        values: Tensor::new(x.shape().to_vec(), v).expect("same shape"),
        class: c,
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `-log softmax(x)_c`.
pub fn softmax_xent_loss(x: &[f64], c: usize) -> f64 {
    log_sum_exp(x) - x[c]
}

/// `y - softmax(x)`.
pub fn softmax_delta(x: &[f64], c: usize, out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i == c { 1.0 } else { 0.0 } - *o / z;
    }
}

pub fn softmax_xent_delta(x: &Tensor, c: usize) -> Tensor {
    let mut v = vec![0.0; x.len()];
    softmax_delta(x.data(), c, &mut v);
    Tensor::new(x.shape().to_vec(), v).expect("same shape")
}

impl LossKind {
    pub fn loss(self, x: &[f64], c: usize, mu: f64) -> f64 {
        match self {
            LossKind::Hinge => hinge_loss(x, c, mu),
            LossKind::SoftmaxXent => softmax_xent_loss(x, c),
        }
    }

    pub fn delta(self, x: &[f64], c: usize, mu: f64, out: &mut [f64]) {
        match self {
            LossKind::Hinge => hinge_delta(x, c, mu, out),
            LossKind::SoftmaxXent => softmax_delta(x, c, out),
        }
    }
}

/// Index of the largest output; the first one wins ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

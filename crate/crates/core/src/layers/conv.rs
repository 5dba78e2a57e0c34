use super::{check_len, hidden_state, DualWeights, LayerError, LayerState, Result, Synapses};
use crate::netspec::FeedbackRule;
use crate::tensor::Tensor;

/// Same-padded cross-correlation; filters are `[c_out, c_in, kh, kw]`.
///
/// Output pixel `(i, j)` reads input `(i + a - ph, j + b - pw)` for tap
/// `(a, b)`, with `ph = (kh - 1) / 2`, so even kernels pad one extra row and
/// column at the far end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
}

/// Output positions `[lo, hi)` whose tap `t` lands inside `[0, len)`.
#[inline]
pub(crate) fn span(len: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (len + pad).saturating_sub(tap).min(len);
    (lo, hi.max(lo))
}

impl ConvGeometry {
    pub fn new(c_in: usize, height: usize, width: usize, c_out: usize, kh: usize, kw: usize) -> Self {
        ConvGeometry {
            c_in,
            height,
            width,
            c_out,
            kh,
            kw,
        }
    }

    /// Geometry from a filter bank and an input `[c, h, w]`.
    pub fn infer(filters: &Tensor, input_shape: &[usize]) -> Result<Self> {
        match (filters.shape(), input_shape) {
            (&[c_out, c_in, kh, kw], &[c, h, w]) if c == c_in => Ok(ConvGeometry::new(c_in, h, w, c_out, kh, kw)),
            (f, x) => Err(LayerError::Invalid(format!(
                "conv filters {f:?} incompatible with input {x:?}"
            ))),
        }
    }

    pub fn pads(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }

    pub fn filter_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kh, self.kw]
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.height, self.width]
    }

    pub fn in_shape(&self) -> Vec<usize> {
        vec![self.c_in, self.height, self.width]
    }

    /// Glorot fans of one filter bank.
    pub fn fans(&self) -> (usize, usize) {
        let k = self.kh * self.kw;
        (self.c_in * k, self.c_out * k)
    }

    #[inline]
    fn tap_index(&self, o: usize, c: usize, a: usize, b: usize) -> usize {
        ((o * self.c_in + c) * self.kh + a) * self.kw + b
    }
}

impl Synapses for ConvGeometry {
    fn n_in(&self) -> usize {
        self.c_in * self.height * self.width
    }

    fn n_out(&self) -> usize {
        self.c_out * self.height * self.width
    }

    fn n_weights(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }

    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64]) {
        let (hh, ww) = (self.height, self.width);
        let (ph, pw) = self.pads();
        h.fill(0.0);
        for o in 0..self.c_out {
            let out = &mut h[o * hh * ww..(o + 1) * hh * ww];
            for c in 0..self.c_in {
                let inp = &x[c * hh * ww..(c + 1) * hh * ww];
                for a in 0..self.kh {
                    let (i0, i1) = span(hh, a, ph);
                    for b in 0..self.kw {
                        let wv = w[self.tap_index(o, c, a, b)];
                        let (j0, j1) = span(ww, b, pw);
                        for i in i0..i1 {
                            let src = (i + a - ph) * ww + j0 + b - pw;
                            let orow = &mut out[i * ww + j0..i * ww + j1];
                            let irow = &inp[src..src + j1 - j0];
                            for (o_, &v) in orow.iter_mut().zip(irow) {
                                *o_ += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn route(&self, f: &[f64], delta: &[f64], g_in: &mut [f64]) {
        let (hh, ww) = (self.height, self.width);
        let (ph, pw) = self.pads();
        for o in 0..self.c_out {
            let d = &delta[o * hh * ww..(o + 1) * hh * ww];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            for c in 0..self.c_in {
                let gi = &mut g_in[c * hh * ww..(c + 1) * hh * ww];
                for a in 0..self.kh {
                    let (i0, i1) = span(hh, a, ph);
                    for b in 0..self.kw {
                        let fv = f[self.tap_index(o, c, a, b)];
                        let (j0, j1) = span(ww, b, pw);
                        for i in i0..i1 {
                            let dst = (i + a - ph) * ww + j0 + b - pw;
                            let grow = &mut gi[dst..dst + j1 - j0];
                            let drow = &d[i * ww + j0..i * ww + j1];
                            for (g, &v) in grow.iter_mut().zip(drow) {
                                *g += fv * v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn accumulate(&self, delta: &[f64], x: &[f64], g: &mut [f64]) {
        let (hh, ww) = (self.height, self.width);
        let (ph, pw) = self.pads();
        for o in 0..self.c_out {
            let d = &delta[o * hh * ww..(o + 1) * hh * ww];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            for c in 0..self.c_in {
                let inp = &x[c * hh * ww..(c + 1) * hh * ww];
                for a in 0..self.kh {
                    let (i0, i1) = span(hh, a, ph);
                    for b in 0..self.kw {
                        let (j0, j1) = span(ww, b, pw);
                        let mut s = 0.0;
                        for i in i0..i1 {
                            let src = (i + a - ph) * ww + j0 + b - pw;
                            let drow = &d[i * ww + j0..i * ww + j1];
                            let irow = &inp[src..src + j1 - j0];
                            for (&dv, &xv) in drow.iter().zip(irow) {
                                s += dv * xv;
                            }
                        }
                        g[self.tap_index(o, c, a, b)] += s;
                    }
                }
            }
        }
    }
}

/// Hidden conv layer on input `[c, h, w]`.
pub fn conv_forward(filters: &DualWeights, x: &Tensor) -> Result<LayerState> {
    let g = ConvGeometry::infer(filters.w(), x.shape())?;
    let mut h = vec![0.0; g.n_out()];
    g.forward(filters.w().data(), x.data(), &mut h);
    hidden_state(x, h, g.out_shape(), false)
}

/// Delta of the layer below a conv layer: the transposed convolution of
/// `delta_above` with `W` (BP) or the feedback bank, gated by the layer below.
pub fn conv_feedback(
    filters_above: &DualWeights,
    below: &LayerState,
    delta_above: &Tensor,
    rule: FeedbackRule,
) -> Result<Tensor> {
    if below.x_out.is_empty() {
        return Err(LayerError::Sequencing("feedback requested before the forward pass"));
    }
    let g = ConvGeometry::infer(filters_above.w(), below.x_out.shape())?;
    check_len("conv_feedback (delta)", g.n_out(), delta_above.len())?;
    let mut out = vec![0.0; g.n_in()];
    g.route(filters_above.route_matrix(rule).data(), delta_above.data(), &mut out);
    below.gated(&mut out);
    Ok(Tensor::new(below.x_out.shape().to_vec(), out)?)
}

/// Tied update: each tap accumulates the spatial sum of its Hebbian products.
pub fn conv_update(filters: &mut DualWeights, state: &LayerState, eta: f64, rule: FeedbackRule) -> Result<()> {
    let g = ConvGeometry::infer(filters.w(), state.x_in.shape())?;
    let delta = state
        .delta
        .as_ref()
        .ok_or(LayerError::Sequencing("update requested before the delta was computed"))?;
    check_len("conv_update (delta)", g.n_out(), delta.len())?;
    let mut acc = vec![0.0; g.n_weights()];
    g.accumulate(delta.data(), state.x_in.data(), &mut acc);
    filters.apply_increment(&acc, eta, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{full_forward, DenseGeometry};
    use crate::tensor::Rng;

    #[test]
    fn one_dimensional_hand_convolution() {
        let f = DualWeights::tied(Tensor::new(vec![1, 1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = conv_forward(&f, &x).unwrap();
        assert_eq!(s.h.unwrap().data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn zero_delta_gives_zero_update() {
        let mut rng = Rng::new(1);
        let f0 = DualWeights::tied(Tensor::glorot_uniform(&mut rng, 18, 18, vec![2, 2, 3, 3]));
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|i| i as f64 / 40.0).collect()).unwrap();
        let mut s = conv_forward(&f0, &x).unwrap();
        s.delta = Some(Tensor::zeros(vec![2, 4, 4]));
        let mut f = f0.clone();
        conv_update(&mut f, &s, 0.1, FeedbackRule::Urfb).unwrap();
        assert_eq!(f, f0);
    }

    #[test]
    fn single_pixel_one_by_one_is_dense() {
        let mut rng = Rng::new(2);
        let w = Tensor::glorot_uniform(&mut rng, 3, 4, vec![4, 3]);
        let x = Tensor::new(vec![3], vec![0.2, -0.4, 0.6]).unwrap();
        let dense = full_forward(&DualWeights::tied(w.clone()), &x).unwrap();
        let filters = DualWeights::tied(w.reshape(vec![4, 3, 1, 1]).unwrap());
        let conv = conv_forward(&filters, &x.clone().reshape(vec![3, 1, 1]).unwrap()).unwrap();
        assert_eq!(conv.x_out.data(), dense.x_out.data());
        let _ = DenseGeometry { n_in: 3, n_out: 4 };
    }

    #[test]
    fn even_kernel_pads_at_the_end() {
        // 2-tap filter [1, 1] on [1, 2, 3]: output i reads x[i] + x[i+1]
        let f = DualWeights::tied(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap());
        let x = Tensor::new(vec![1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let h = conv_forward(&f, &x).unwrap().h.unwrap();
        let want = [0.1 + 0.2, 0.2 + 0.3, 0.3];
        for (a, b) in h.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn route_is_the_adjoint_of_forward() {
        // <W x, d> == <x, W^t d> for random data
        let mut rng = Rng::new(3);
        let g = ConvGeometry::new(2, 5, 4, 3, 3, 2);
        let w: Vec<f64> = (0..g.n_weights()).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..g.n_in()).map(|_| rng.normal()).collect();
        let d: Vec<f64> = (0..g.n_out()).map(|_| rng.normal()).collect();
        let mut h = vec![0.0; g.n_out()];
        g.forward(&w, &x, &mut h);
        let mut gi = vec![0.0; g.n_in()];
        g.route(&w, &d, &mut gi);
        let lhs: f64 = h.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        // and accumulate is the derivative of <W x, d> in W
        let mut gw = vec![0.0; g.n_weights()];
        g.accumulate(&d, &x, &mut gw);
        let ip: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((ip - lhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}

use super::{check_len, hidden_state, ConvGeometry, DualWeights, LayerError, LayerState, Result, Synapses};
use crate::netspec::FeedbackRule;
use crate::tensor::Tensor;

/// Untied counterpart of a [`ConvGeometry`]: one independent weight per
/// connection the convolution would make.
///
/// Entries are stored row-compressed by output unit; within a row they follow
/// `(c, a, b)` order, so input indices are increasing and a row sums in the
/// same order as the convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConvGeometry {
    conv: ConvGeometry,
    row_ptr: Vec<usize>,
    in_idx: Vec<u32>,
    tap: Vec<u32>,
}

impl LocalConvGeometry {
    pub fn new(conv: ConvGeometry) -> Self {
        let (hh, ww) = (conv.height, conv.width);
        let (ph, pw) = conv.pads();
        let mut row_ptr = Vec::with_capacity(conv.n_out() + 1);
        let mut in_idx = Vec::new();
        let mut tap = Vec::new();
        row_ptr.push(0);
        for o in 0..conv.c_out {
            for i in 0..hh {
                for j in 0..ww {
                    for c in 0..conv.c_in {
                        for a in 0..conv.kh {
                            let y = (i + a).wrapping_sub(ph);
                            if y >= hh {
                                continue;
                            }
                            for b in 0..conv.kw {
                                let z = (j + b).wrapping_sub(pw);
                                if z >= ww {
                                    continue;
                                }
                                in_idx.push(((c * hh + y) * ww + z) as u32);
                                tap.push((((o * conv.c_in + c) * conv.kh + a) * conv.kw + b) as u32);
                            }
                        }
                    }
                    row_ptr.push(in_idx.len());
                }
            }
        }
        LocalConvGeometry {
            conv,
            row_ptr,
            in_idx,
            tap,
        }
    }

    pub fn conv(&self) -> &ConvGeometry {
        &self.conv
    }

    /// Filter-bank tap that entry `k` replicates.
    pub fn tap_of(&self, k: usize) -> usize {
        self.tap[k] as usize
    }

    pub fn in_of(&self, k: usize) -> usize {
        self.in_idx[k] as usize
    }

    /// Index range of the entries feeding output unit `u`.
    pub fn row(&self, u: usize) -> std::ops::Range<usize> {
        self.row_ptr[u]..self.row_ptr[u + 1]
    }

    /// Entry index of connection `(out_index, in_index)`, if it exists.
    pub fn find(&self, out_index: usize, in_index: usize) -> Option<usize> {
        if out_index >= self.n_out() {
            return None;
        }
        let r = self.row(out_index);
        let row = &self.in_idx[r.clone()];
        row.binary_search(&(in_index as u32)).ok().map(|p| r.start + p)
    }

    /// Expand a filter bank (layout `[c_out, c_in, kh, kw]`) to one value per entry.
    pub fn expand(&self, bank: &[f64]) -> Vec<f64> {
        self.tap.iter().map(|&t| bank[t as usize]).collect()
    }

    /// Sum per-entry values that share a tap back into a filter bank.
    pub fn contract(&self, entries: &[f64]) -> Vec<f64> {
        let mut bank = vec![0.0; self.conv.n_weights()];
        for (k, &v) in entries.iter().enumerate() {
            bank[self.tap[k] as usize] += v;
        }
        bank
    }
}

impl Synapses for LocalConvGeometry {
    fn n_in(&self) -> usize {
        self.conv.n_in()
    }

    fn n_out(&self) -> usize {
        self.conv.n_out()
    }

    fn n_weights(&self) -> usize {
        self.in_idx.len()
    }

    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64]) {
        for (u, hu) in h.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row(u) {
                s += w[k] * x[self.in_idx[k] as usize];
            }
            *hu = s;
        }
    }

    fn route(&self, f: &[f64], delta: &[f64], g_in: &mut [f64]) {
        for (u, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for k in self.row(u) {
                g_in[self.in_idx[k] as usize] += f[k] * d;
            }
        }
    }

    fn accumulate(&self, delta: &[f64], x: &[f64], g: &mut [f64]) {
        for (u, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for k in self.row(u) {
                g[k] += d * x[self.in_idx[k] as usize];
            }
        }
    }
}

/// Sparse weights with conv-induced support; `W` and `R` are aligned to the
/// same entry list (entry `k` of `R` is the feedback of connection `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConvWeights {
    pub geometry: LocalConvGeometry,
    pub weights: DualWeights,
}

impl LocalConvWeights {
    /// Tied initialization: every entry copies its filter tap, for both `W`
    /// and the feedback bank.
    pub fn from_conv(conv: ConvGeometry, banks: &DualWeights) -> Result<Self> {
        if banks.w().shape() != conv.filter_shape().as_slice() {
            return Err(LayerError::Invalid(format!(
                "filter bank {:?} does not match geometry {:?}",
                banks.w().shape(),
                conv.filter_shape()
            )));
        }
        let geometry = LocalConvGeometry::new(conv);
        let n = geometry.n_weights();
        let w = Tensor::new(vec![n], geometry.expand(banks.w().data()))?;
        let r = Tensor::new(vec![n], geometry.expand(banks.rt().data()))?;
        Ok(LocalConvWeights {
            geometry,
            weights: DualWeights::new(w, r)?,
        })
    }

    pub fn value_at(&self, out_index: usize, in_index: usize) -> Option<f64> {
        self.geometry
            .find(out_index, in_index)
            .map(|k| self.weights.w().data()[k])
    }

    /// Overwrite one feedforward entry; the support never changes.
    pub fn set_entry(&mut self, out_index: usize, in_index: usize, value: f64) -> Result<()> {
        let k = self
            .geometry
            .find(out_index, in_index)
            .ok_or(LayerError::OutsideSupport { out_index, in_index })?;
        let mut w = self.weights.w().clone();
        w.data_mut()[k] = value;
        self.weights.set_w(w)
    }

    /// Dense `n_out x n_in` view of `W`, for inspection.
    pub fn to_dense(&self) -> Tensor {
        let g = &self.geometry;
        let (n_out, n_in) = (g.n_out(), g.n_in());
        let mut m = Tensor::zeros(vec![n_out, n_in]);
        for u in 0..n_out {
            for k in g.row(u) {
                m.data_mut()[u * n_in + g.in_of(k)] = self.weights.w().data()[k];
            }
        }
        m
    }
}

pub fn localconv_forward(lw: &LocalConvWeights, x: &Tensor) -> Result<LayerState> {
    let g = &lw.geometry;
    check_len("localconv_forward", g.n_in(), x.len())?;
    let mut h = vec![0.0; g.n_out()];
    g.forward(lw.weights.w().data(), x.data(), &mut h);
    hidden_state(x, h, g.conv().out_shape(), false)
}

pub fn localconv_feedback(
    above: &LocalConvWeights,
    below: &LayerState,
    delta_above: &Tensor,
    rule: FeedbackRule,
) -> Result<Tensor> {
    if below.x_out.is_empty() {
        return Err(LayerError::Sequencing("feedback requested before the forward pass"));
    }
    let g = &above.geometry;
    check_len("localconv_feedback (state)", g.n_in(), below.x_out.len())?;
    check_len("localconv_feedback (delta)", g.n_out(), delta_above.len())?;
    let mut out = vec![0.0; g.n_in()];
    g.route(above.weights.route_matrix(rule).data(), delta_above.data(), &mut out);
    below.gated(&mut out);
    Ok(Tensor::new(below.x_out.shape().to_vec(), out)?)
}

/// Each stored entry moves by its own product `eta * delta_out * x_in`.
pub fn localconv_update(lw: &mut LocalConvWeights, state: &LayerState, eta: f64, rule: FeedbackRule) -> Result<()> {
    let delta = state
        .delta
        .as_ref()
        .ok_or(LayerError::Sequencing("update requested before the delta was computed"))?;
    let g = &lw.geometry;
    check_len("localconv_update (delta)", g.n_out(), delta.len())?;
    check_len("localconv_update (x_in)", g.n_in(), state.x_in.len())?;
    let mut acc = vec![0.0; g.n_weights()];
    g.accumulate(delta.data(), state.x_in.data(), &mut acc);
    lw.weights.apply_increment(&acc, eta, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{conv_forward, conv_update};
    use crate::tensor::Rng;

    fn banks(geom: ConvGeometry, seed: u64) -> DualWeights {
        let mut rng = Rng::new(seed);
        let (fi, fo) = geom.fans();
        let w = Tensor::glorot_uniform(&mut rng, fi, fo, geom.filter_shape());
        DualWeights::tied(w)
    }

    #[test]
    fn support_matches_conv_connectivity() {
        let geom = ConvGeometry::new(2, 4, 5, 3, 3, 3);
        let lc = LocalConvWeights::from_conv(geom, &banks(geom, 1)).unwrap();
        // dense view of the conv operator, column by column
        let mut dense = Tensor::zeros(vec![geom.n_out(), geom.n_in()]);
        for col in 0..geom.n_in() {
            let mut e = vec![0.0; geom.n_in()];
            e[col] = 1.0;
            let mut h = vec![0.0; geom.n_out()];
            geom.forward(lc_bank(&lc).as_slice(), &e, &mut h);
            for (row, v) in h.iter().enumerate() {
                dense.data_mut()[row * geom.n_in() + col] = *v;
            }
        }
        assert_eq!(lc.to_dense(), dense);
    }

    fn lc_bank(lc: &LocalConvWeights) -> Vec<f64> {
        // recover the bank from tied entries
        let mut bank = vec![0.0; lc.geometry.conv().n_weights()];
        for k in 0..lc.geometry.n_weights() {
            bank[lc.geometry.tap_of(k)] = lc.weights.w().data()[k];
        }
        bank
    }

    #[test]
    fn tied_init_reproduces_conv_exactly() {
        let geom = ConvGeometry::new(3, 6, 7, 4, 5, 5);
        let b = banks(geom, 2);
        let lc = LocalConvWeights::from_conv(geom, &b).unwrap();
        let mut rng = Rng::new(9);
        let x = Tensor::new(geom.in_shape(), (0..geom.n_in()).map(|_| rng.uniform()).collect()).unwrap();
        let a = conv_forward(&b, &x).unwrap();
        let l = localconv_forward(&lc, &x).unwrap();
        assert_eq!(a.h, l.h);
        assert_eq!(a.x_out, l.x_out);
    }

    #[test]
    fn entries_of_one_displacement_drift_apart() {
        // 1-D, one channel, 3 taps, two output locations with distinct deltas
        let geom = ConvGeometry::new(1, 1, 4, 1, 1, 3);
        let b = DualWeights::tied(Tensor::new(vec![1, 1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let mut lc = LocalConvWeights::from_conv(geom, &b).unwrap();
        let x = Tensor::new(vec![1, 1, 4], vec![0.5, 0.4, 0.3, 0.2]).unwrap();
        let mut s = localconv_forward(&lc, &x).unwrap();
        s.delta = Some(Tensor::new(vec![1, 1, 4], vec![0.0, 1.0, -1.0, 0.0]).unwrap());
        localconv_update(&mut lc, &s, 1.0, FeedbackRule::Bp).unwrap();
        // centre tap (displacement 0) at outputs 1 and 2: 0.2 + 1*0.4 vs 0.2 - 1*0.3
        let at1 = lc.value_at(1, 1).unwrap();
        let at2 = lc.value_at(2, 2).unwrap();
        assert!((at1 - 0.6).abs() < 1e-15);
        assert!((at2 + 0.1).abs() < 1e-15);
        // untouched locations keep the tied value
        assert_eq!(lc.value_at(0, 0), Some(0.2));
    }

    #[test]
    fn zero_delta_leaves_weights() {
        let geom = ConvGeometry::new(2, 3, 3, 2, 3, 3);
        let mut lc = LocalConvWeights::from_conv(geom, &banks(geom, 3)).unwrap();
        let before = lc.clone();
        let x = Tensor::filled(geom.in_shape(), 0.5);
        let mut s = localconv_forward(&lc, &x).unwrap();
        s.delta = Some(Tensor::zeros(geom.out_shape()));
        localconv_update(&mut lc, &s, 0.1, FeedbackRule::Urfb).unwrap();
        assert_eq!(lc, before);
    }

    #[test]
    fn writes_outside_the_support_are_rejected() {
        let geom = ConvGeometry::new(1, 1, 5, 1, 1, 3);
        let mut lc = LocalConvWeights::from_conv(geom, &banks(geom, 4)).unwrap();
        assert!(lc.set_entry(0, 1, 0.7).is_ok());
        assert_eq!(lc.value_at(0, 1), Some(0.7));
        assert!(matches!(
            lc.set_entry(0, 4, 1.0),
            Err(LayerError::OutsideSupport { out_index: 0, in_index: 4 })
        ));
    }

    #[test]
    fn conv_update_is_the_spatial_sum_of_entries() {
        let geom = ConvGeometry::new(2, 5, 5, 3, 3, 3);
        let b = banks(geom, 5);
        let lc = LocalConvWeights::from_conv(geom, &b).unwrap();
        let mut rng = Rng::new(6);
        let x = Tensor::new(geom.in_shape(), (0..geom.n_in()).map(|_| rng.normal()).collect()).unwrap();
        let d = Tensor::new(geom.out_shape(), (0..geom.n_out()).map(|_| rng.normal()).collect()).unwrap();
        let mut g_local = vec![0.0; lc.geometry.n_weights()];
        lc.geometry.accumulate(d.data(), x.data(), &mut g_local);
        let summed = lc.geometry.contract(&g_local);
        let mut s = conv_forward(&b, &x).unwrap();
        s.delta = Some(d);
        let mut b2 = b.clone();
        conv_update(&mut b2, &s, 1.0, FeedbackRule::Bp).unwrap();
        for ((after, before), want) in b2.w().data().iter().zip(b.w().data()).zip(&summed) {
            assert!((after - before - want).abs() <= 1e-12);
        }
    }
}

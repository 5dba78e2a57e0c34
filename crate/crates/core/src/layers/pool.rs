use super::{check_len, LayerError, LayerState, Result};
use crate::tensor::Tensor;

/// Max pooling of size `n` and stride `s` over each channel.
///
/// Window `o` covers positions `o*s - (n-1)/2 .. o*s - (n-1)/2 + n` and cells
/// outside the grid count as zeros; an extent `e` becomes `ceil(e/s)`.
/// Ties go to the lowest flat index, and a grid cell beats padding on a tie.
/// When the padding wins the output is 0 and no input receives feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(channels: usize, height: usize, width: usize, size: usize, stride: usize) -> Self {
        PoolGeometry {
            channels,
            height,
            width,
            size,
            stride,
        }
    }

    pub fn out_height(&self) -> usize {
        self.height.div_ceil(self.stride)
    }

    pub fn out_width(&self) -> usize {
        self.width.div_ceil(self.stride)
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.channels * self.out_height() * self.out_width()
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.channels, self.out_height(), self.out_width()]
    }

    /// Window start and whether the window leaves the grid, along one axis.
    fn window(&self, o: usize, extent: usize) -> (std::ops::Range<usize>, bool) {
        let start = (o * self.stride) as isize - ((self.size - 1) / 2) as isize;
        let end = start + self.size as isize;
        let lo = start.max(0) as usize;
        let hi = (end.min(extent as isize)) as usize;
        (lo..hi, start < 0 || end > extent as isize)
    }

    /// Pooled values and the flat input index each one came from.
    pub fn forward(&self, x: &[f64], out: &mut [f64], argmax: &mut [Option<usize>]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for oi in 0..oh {
                let (rows, pad_r) = self.window(oi, self.height);
                for oj in 0..ow {
                    let (cols, pad_c) = self.window(oj, self.width);
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for y in rows.clone() {
                        for z in cols.clone() {
                            let idx = c * plane + y * self.width + z;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (c * oh + oi) * ow + oj;
                    if (pad_r || pad_c) && best < 0.0 {
                        out[o] = 0.0;
                        argmax[o] = None;
                    } else {
                        out[o] = best;
                        argmax[o] = Some(at);
                    }
                }
            }
        }
    }

    /// `g_in[argmax[o]] += g_out[o]`.
    pub fn route(&self, argmax: &[Option<usize>], g_out: &[f64], g_in: &mut [f64]) {
        for (a, &g) in argmax.iter().zip(g_out) {
            if let Some(i) = a {
                g_in[*i] += g;
            }
        }
    }
}

pub fn maxpool_forward(x: &Tensor, size: usize, stride: usize) -> Result<LayerState> {
    let &[c, h, w] = x.shape() else {
        return Err(LayerError::Invalid(format!("maxpool input must be [c,h,w], got {:?}", x.shape())));
    };
    if size == 0 || stride == 0 {
        return Err(LayerError::Invalid("pool size and stride must be >= 1".into()));
    }
    let g = PoolGeometry::new(c, h, w, size, stride);
    let mut out = vec![0.0; g.out_len()];
    let mut argmax = vec![None; g.out_len()];
    g.forward(x.data(), &mut out, &mut argmax);
    Ok(LayerState {
        x_in: x.clone(),
        x_out: Tensor::new(g.out_shape(), out)?,
        pool_argmax: Some(argmax),
        ..LayerState::default()
    })
}

/// Route each delta back to its window's recorded maximum.
pub fn maxpool_feedback(state: &LayerState, delta_above: &Tensor) -> Result<Tensor> {
    let argmax = state
        .pool_argmax
        .as_ref()
        .ok_or(LayerError::Sequencing("maxpool feedback before its forward pass"))?;
    check_len("maxpool_feedback", argmax.len(), delta_above.len())?;
    let mut g = vec![0.0; state.x_in.len()];
    for (a, &d) in argmax.iter().zip(delta_above.data()) {
        if let Some(i) = a {
            g[*i] += d;
        }
    }
    Ok(Tensor::new(state.x_in.shape().to_vec(), g)?)
}

use super::{FeedbackError, Result};
use crate::layers::{
    prune, ConvGeometry, DenseGeometry, DualWeights, LayerState, LocalConvWeights, PoolGeometry, Synapses,
};
use crate::netspec::{infer_shapes, FeedbackRule, LayerSpec, NetSpec};
use crate::tensor::{gate_open, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkOptions {
    pub rule: FeedbackRule,
    /// Fraction of connections kept in each of `W` and `R`.
    pub connectivity: f64,
    /// Start FRFB/URFB runs from `R = W^t` instead of an independent draw.
    pub tie_feedback: bool,
}

impl NetworkOptions {
    pub fn new(rule: FeedbackRule) -> Self {
        NetworkOptions {
            rule,
            connectivity: 1.0,
            tie_feedback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synapse {
    Dense(DenseGeometry),
    Conv(ConvGeometry),
    Local(Box<crate::layers::LocalConvGeometry>),
}

impl Synapse {
    fn get(&self) -> &dyn Synapses {
        match self {
            Synapse::Dense(g) => g,
            Synapse::Conv(g) => g,
            Synapse::Local(g) => g.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Dense, conv or localconv; `linear` only for the read-out layer.
    Param {
        synapse: Synapse,
        weights: DualWeights,
        linear: bool,
    },
    Pool(PoolGeometry),
    Drop {
        p: f64,
        /// Mask of the current batch, drawn by [`Network::begin_batch`].
        mask: Option<Tensor>,
    },
    Sum,
}

impl Layer {
    pub fn weights(&self) -> Option<&DualWeights> {
        match self {
            Layer::Param { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

/// Forward caches of one sample, stamped with the weights' generation.
#[derive(Debug, Clone)]
pub struct Trace {
    generation: u64,
    train: bool,
    pub states: Vec<LayerState>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.states.last().expect("network has layers").x_out
    }
}

/// Hebbian increments summed over the samples of one batch.
#[derive(Debug, Clone)]
pub struct Accumulator {
    generation: u64,
    grads: Vec<Option<Vec<f64>>>,
    samples: usize,
}

impl Accumulator {
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Summed increment of layer `j` (layout of `W`), if it has weights.
    pub fn grad(&self, j: usize) -> Option<&[f64]> {
        self.grads[j].as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Layer>,
    /// Shape of node `k`: 0 is the input, `k + 1` the output of layer `k`.
    nodes: Vec<Vec<usize>>,
    rule: FeedbackRule,
    generation: u64,
}

fn draw_weights(
    rng: &Rng,
    j: usize,
    shape: Vec<usize>,
    fans: (usize, usize),
    opts: &NetworkOptions,
) -> Result<DualWeights> {
    let mut wr = rng.derive(2 * j as u64);
    let w = Tensor::glorot_uniform(&mut wr, fans.0, fans.1, shape.clone());
    let dual = if opts.rule == FeedbackRule::Bp || opts.tie_feedback {
        DualWeights::tied(w)
    } else {
        let mut rr = rng.derive(2 * j as u64 + 1);
        let r = Tensor::glorot_uniform(&mut rr, fans.0, fans.1, crate::layers::feedback_shape(&shape));
        DualWeights::new(w, r)?
    };
    Ok(dual)
}

impl Network {
    /// Glorot-initialized network. Each layer draws from its own stream
    /// derived from `rng`, so pruning or feedback settings don't shift the
    /// feedforward draws.
    pub fn build(spec: &NetSpec, opts: NetworkOptions, rng: &Rng) -> Result<Network> {
        if !(opts.connectivity > 0.0 && opts.connectivity <= 1.0) {
            return Err(FeedbackError::Invalid(format!(
                "connectivity {} not in (0, 1]",
                opts.connectivity
            )));
        }
        let shapes = infer_shapes(spec)?;
        let mut nodes = vec![spec.input.dims().to_vec()];
        nodes.extend(shapes.iter().map(|s| s.dims().to_vec()));
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (j, l) in spec.layers.iter().enumerate() {
            let x = spec_shape(&nodes[j]);
            let layer = match *l {
                LayerSpec::Full { units } => {
                    let g = DenseGeometry { n_in: x.len(), n_out: units };
                    let w = draw_weights(rng, j, g.weight_shape(), (g.n_in, g.n_out), &opts)?;
                    Layer::Param {
                        synapse: Synapse::Dense(g),
                        weights: w,
                        linear: false,
                    }
                }
                LayerSpec::Output => {
                    let g = DenseGeometry {
                        n_in: x.len(),
                        n_out: spec.classes,
                    };
                    let w = draw_weights(rng, j, g.weight_shape(), (g.n_in, g.n_out), &opts)?;
                    Layer::Param {
                        synapse: Synapse::Dense(g),
                        weights: w,
                        linear: true,
                    }
                }
                LayerSpec::Conv { filters, kh, kw } => {
                    let g = ConvGeometry::new(x.c, x.h, x.w, filters, kh, kw);
                    let w = draw_weights(rng, j, g.filter_shape(), g.fans(), &opts)?;
                    Layer::Param {
                        synapse: Synapse::Conv(g),
                        weights: w,
                        linear: false,
                    }
                }
                LayerSpec::LocalConv { filters, kh, kw } => {
                    let g = ConvGeometry::new(x.c, x.h, x.w, filters, kh, kw);
                    let banks = draw_weights(rng, j, g.filter_shape(), g.fans(), &opts)?;
                    let lc = LocalConvWeights::from_conv(g, &banks)?;
                    Layer::Param {
                        synapse: Synapse::Local(Box::new(lc.geometry)),
                        weights: lc.weights,
                        linear: false,
                    }
                }
                LayerSpec::Maxpool { size, stride } => Layer::Pool(PoolGeometry::new(x.c, x.h, x.w, size, stride)),
                LayerSpec::Drop { p } => Layer::Drop { p, mask: None },
                LayerSpec::Sum => Layer::Sum,
            };
            layers.push(layer);
        }
        if opts.connectivity < 1.0 {
            for (j, layer) in layers.iter_mut().enumerate() {
                if let Layer::Param { weights, .. } = layer {
                    let mut pr = rng.derive(1_000_000 + j as u64);
                    *weights = prune(weights.clone(), 1.0 - opts.connectivity, &mut pr)?;
                    if opts.rule == FeedbackRule::Bp {
                        // BP routes through W itself
                        let w = weights.w().clone();
                        *weights = DualWeights::tied(w).with_masks(weights.mask_w().cloned(), None)?;
                    }
                }
            }
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
            nodes,
            rule: opts.rule,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn rule(&self) -> FeedbackRule {
        self.rule
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Indices of the layers that carry weights.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&j| self.layers[j].weights().is_some())
            .collect()
    }

    pub fn weights(&self, j: usize) -> Option<&DualWeights> {
        self.layers.get(j).and_then(|l| l.weights())
    }

    /// Mutable access to a layer's weights; invalidates outstanding traces.
    pub fn weights_mut(&mut self, j: usize) -> Option<&mut DualWeights> {
        self.generation += 1;
        match self.layers.get_mut(j) {
            Some(Layer::Param { weights, .. }) => Some(weights),
            _ => None,
        }
    }

    /// Draw this batch's dropout masks.
    pub fn begin_batch(&mut self, rng: &mut Rng) -> Result<()> {
        for (j, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Drop { p, mask } = layer {
                *mask = Some(crate::layers::draw_drop_mask(rng, &self.nodes[j], *p)?);
            }
        }
        Ok(())
    }

    /// Fix the mask of dropout layer `j` (for controlled experiments).
    pub fn set_drop_mask(&mut self, j: usize, m: Tensor) -> Result<()> {
        let want: usize = self.nodes[j].iter().product();
        match self.layers.get_mut(j) {
            Some(Layer::Drop { mask, .. }) if m.len() == want => {
                *mask = Some(m);
                Ok(())
            }
            _ => Err(FeedbackError::Invalid(format!("layer {j} is not a dropout layer of size {want}"))),
        }
    }

    /// Forward pass of one sample. Training mode applies the batch's dropout
    /// masks; evaluation mode passes every unit.
    pub fn forward(&self, x: &[f64], train: bool) -> Result<Trace> {
        let n0: usize = self.nodes[0].iter().product();
        if x.len() != n0 {
            return Err(FeedbackError::Invalid(format!("input has {} values, expected {n0}", x.len())));
        }
        let mut states: Vec<LayerState> = Vec::with_capacity(self.layers.len());
        let input = Tensor::new(self.nodes[0].clone(), x.to_vec())?;
        for (j, layer) in self.layers.iter().enumerate() {
            let x_in = if j == 0 { input.clone() } else { states[j - 1].x_out.clone() };
            let out_shape = self.nodes[j + 1].clone();
            let state = match layer {
                Layer::Param { synapse, weights, linear } => {
                    let s = synapse.get();
                    let mut h = vec![0.0; s.n_out()];
                    s.forward(weights.w().data(), x_in.data(), &mut h);
                    let h = Tensor::new(out_shape, h)?;
                    let (x_out, gate) = if *linear {
                        (h.clone(), None)
                    } else {
                        (h.saturate(), Some(h.map(|v| if gate_open(v) { 1.0 } else { 0.0 })))
                    };
                    LayerState {
                        x_in,
                        x_out,
                        h: Some(h),
                        gate,
                        ..LayerState::default()
                    }
                }
                Layer::Pool(g) => {
                    let mut out = vec![0.0; g.out_len()];
                    let mut arg = vec![None; g.out_len()];
                    g.forward(x_in.data(), &mut out, &mut arg);
                    LayerState {
                        x_in,
                        x_out: Tensor::new(out_shape, out)?,
                        pool_argmax: Some(arg),
                        ..LayerState::default()
                    }
                }
                Layer::Drop { mask, .. } => {
                    if train {
                        let m = mask
                            .as_ref()
                            .ok_or(FeedbackError::Sequencing("dropout mask not drawn for this batch"))?;
                        let x_out = x_in.mul(m)?;
                        LayerState {
                            x_in,
                            x_out,
                            drop_mask: Some(m.clone()),
                            ..LayerState::default()
                        }
                    } else {
                        LayerState {
                            x_out: x_in.clone(),
                            x_in,
                            ..LayerState::default()
                        }
                    }
                }
                Layer::Sum => {
                    let other = if j >= 2 { &states[j - 2].x_out } else { &input };
                    let x_out = x_in.add(other)?;
                    LayerState {
                        x_in,
                        x_out,
                        ..LayerState::default()
                    }
                }
            };
            states.push(state);
        }
        Ok(Trace {
            generation: self.generation,
            train,
            states,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(super::argmax(self.forward(x, false)?.output().data()))
    }

    pub fn accumulator(&self) -> Accumulator {
        Accumulator {
            generation: self.generation,
            grads: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Param { synapse, .. } => Some(vec![0.0; synapse.get().n_weights()]),
                    _ => None,
                })
                .collect(),
            samples: 0,
        }
    }

    /// Top-down sweep of one sample: every layer turns the feedback arriving
    /// at its outputs into its own delta (through its gate), adds its Hebbian
    /// product with the cached input, and passes feedback to its inputs.
    pub fn accumulate(&self, trace: &Trace, output_delta: &[f64], acc: &mut Accumulator) -> Result<()> {
        if trace.generation != self.generation || acc.generation != self.generation {
            return Err(FeedbackError::Sequencing("forward cache is stale: weights changed since the forward pass"));
        }
        let n = self.layers.len();
        if trace.states.len() != n {
            return Err(FeedbackError::Sequencing("trace does not belong to this network"));
        }
        let n_out: usize = self.nodes[n].iter().product();
        if output_delta.len() != n_out {
            return Err(FeedbackError::Invalid(format!(
                "output delta has {} values, expected {n_out}",
                output_delta.len()
            )));
        }
        // a node needs feedback only if some weights lie below it
        let first_param = self.layers.iter().position(|l| l.weights().is_some()).unwrap_or(n);
        let needs = |k: usize| k > first_param;
        let mut g: Vec<Option<Vec<f64>>> = vec![None; n + 1];
        g[n] = Some(output_delta.to_vec());
        for j in (0..n).rev() {
            let Some(mut g_out) = g[j + 1].take() else {
                continue;
            };
            let st = &trace.states[j];
            let in_len: usize = self.nodes[j].iter().product();
            match &self.layers[j] {
                Layer::Param { synapse, weights, .. } => {
                    st.gated(&mut g_out);
                    let s = synapse.get();
                    s.accumulate(&g_out, st.x_in.data(), acc.grads[j].as_mut().expect("param layer"));
                    if needs(j) {
                        let dst = g[j].get_or_insert_with(|| vec![0.0; in_len]);
                        s.route(weights.route_matrix(self.rule).data(), &g_out, dst);
                    }
                }
                Layer::Pool(pg) => {
                    if needs(j) {
                        let arg = st.pool_argmax.as_ref().expect("pool state");
                        let dst = g[j].get_or_insert_with(|| vec![0.0; in_len]);
                        pg.route(arg, &g_out, dst);
                    }
                }
                Layer::Drop { .. } => {
                    if needs(j) {
                        if let (true, Some(m)) = (trace.train, &st.drop_mask) {
                            for (v, &k) in g_out.iter_mut().zip(m.data()) {
                                *v *= k;
                            }
                        }
                        add(&mut g[j], g_out, in_len);
                    }
                }
                Layer::Sum => {
                    if needs(j) {
                        add(&mut g[j], g_out.clone(), in_len);
                    }
                    let k = j.saturating_sub(1);
                    if needs(k) && j >= 1 {
                        add(&mut g[k], g_out, in_len);
                    }
                }
            }
        }
        acc.samples += 1;
        Ok(())
    }

    /// `W += eta / B * G` for every layer; invalidates outstanding traces.
    pub fn apply(&mut self, acc: &Accumulator, eta: f64) -> Result<()> {
        if acc.generation != self.generation {
            return Err(FeedbackError::Sequencing("accumulator is stale"));
        }
        if acc.samples > 0 {
            let scale = eta / acc.samples as f64;
            for (layer, grad) in self.layers.iter_mut().zip(&acc.grads) {
                if let (Layer::Param { weights, .. }, Some(g)) = (layer, grad) {
                    weights.apply_increment(g, scale, self.rule)?;
                }
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Batch update from precomputed traces and output deltas.
    pub fn backward_sweep(&mut self, traces: &[Trace], output_deltas: &[Vec<f64>], eta: f64) -> Result<()> {
        if traces.len() != output_deltas.len() {
            return Err(FeedbackError::Invalid("one output delta per trace required".into()));
        }
        let mut acc = self.accumulator();
        for (t, d) in traces.iter().zip(output_deltas) {
            self.accumulate(t, d, &mut acc)?;
        }
        self.apply(&acc, eta)
    }

    /// Correlation of `W_l` and `R_l^t` for every layer with weights.
    pub fn alignment(&self) -> Result<Vec<f64>> {
        self.param_layers()
            .into_iter()
            .map(|j| Ok(self.layers[j].weights().expect("param").alignment()?))
            .collect()
    }

    /// All stored tensors, named `layer{j}.W`, `.R`, `.maskW`, `.maskR`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for j in self.param_layers() {
            let w = self.layers[j].weights().expect("param");
            out.push((format!("layer{j}.W"), w.w().clone()));
            out.push((format!("layer{j}.R"), w.r()));
            if let Some(m) = w.mask_w() {
                out.push((format!("layer{j}.maskW"), m.clone()));
            }
            if let Some(m) = w.mask_r() {
                out.push((format!("layer{j}.maskR"), m));
            }
        }
        out
    }
}

fn add(slot: &mut Option<Vec<f64>>, v: Vec<f64>, size: usize) {
    match slot {
        Some(dst) => {
            debug_assert_eq!(dst.len(), size);
            for (d, x) in dst.iter_mut().zip(v) {
                *d += x;
            }
        }
        None => *slot = Some(v),
    }
}

fn spec_shape(d: &[usize]) -> crate::netspec::Shape3 {
    crate::netspec::Shape3::new(d[0], d[1], d[2])
}

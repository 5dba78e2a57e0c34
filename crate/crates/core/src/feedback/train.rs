use std::time::Instant;

use serde::Serialize;

use super::{argmax, FeedbackError, Network, Result};
use crate::data::Dataset;
use crate::netspec::LossKind;
use crate::tensor::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainParams {
    pub eta: f64,
    pub mu: f64,
    pub batch_size: usize,
    pub loss: LossKind,
}

impl TrainParams {
    pub fn new(eta: f64, batch_size: usize, loss: LossKind) -> Self {
        TrainParams {
            eta,
            mu: 1.0,
            batch_size,
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Misclassification rate over the samples seen in this epoch's training
    /// pass, with the weights of the moment each batch was processed.
    pub train_error: f64,
    pub val_error: Option<f64>,
    pub train_loss: f64,
    /// `corr(W_l, R_l^t)` per layer with weights, after the epoch.
    pub alignment: Vec<f64>,
    pub wall_time_s: f64,
}

/// Error rate and mean loss in evaluation mode.
pub fn evaluate(net: &Network, data: &Dataset, params: &TrainParams) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(FeedbackError::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let mut wrong = 0usize;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let t = net.forward(data.image(i), false)?;
        let out = t.output().data();
        if argmax(out) != data.label(i) {
            wrong += 1;
        }
        loss += params.loss.loss(out, data.label(i), params.mu);
    }
    Ok((wrong as f64 / data.len() as f64, loss / data.len() as f64))
}

/// One pass of fixed-step SGD over seeded shuffled batches; the last partial
/// batch is dropped. Updates are accumulated over each batch from the
/// pre-batch weights and applied once.
pub fn train_epoch(
    net: &mut Network,
    train: &Dataset,
    val: Option<&Dataset>,
    params: &TrainParams,
    rng: &mut Rng,
    epoch: usize,
) -> Result<MetricsRecord> {
    let start = Instant::now();
    if train.is_empty() {
        return Err(FeedbackError::Invalid("training set is empty".into()));
    }
    if params.batch_size == 0 || params.batch_size > train.len() {
        return Err(FeedbackError::Invalid(format!(
            "batch size {} must lie in 1..={}",
            params.batch_size,
            train.len()
        )));
    }
    if !(params.eta >= 0.0 && params.eta.is_finite()) {
        return Err(FeedbackError::Invalid(format!("eta {} must be finite and >= 0", params.eta)));
    }
    let batches = train.batches(params.batch_size, rng);
    let classes = net.spec().classes;
    let mut delta = vec![0.0; classes];
    let (mut wrong, mut seen, mut loss) = (0usize, 0usize, 0.0);
    for batch in &batches {
        net.begin_batch(rng)?;
        let mut acc = net.accumulator();
        for &i in batch {
            let t = net.forward(train.image(i), true)?;
            let out = t.output().data();
            let c = train.label(i);
            if argmax(out) != c {
                wrong += 1;
            }
            loss += params.loss.loss(out, c, params.mu);
            params.loss.delta(out, c, params.mu, &mut delta);
            net.accumulate(&t, &delta, &mut acc)?;
            seen += 1;
        }
        net.apply(&acc, params.eta)?;
    }
    let val_error = match val {
        Some(v) if !v.is_empty() => Some(evaluate(net, v, params)?.0),
        _ => None,
    };
    Ok(MetricsRecord {
        epoch,
        train_error: wrong as f64 / seen as f64,
        val_error,
        train_loss: loss / seen as f64,
        alignment: net.alignment()?,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

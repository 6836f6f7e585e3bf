//! Minibatch SGD with momentum and weight decay.
//!
//! Update rule per parameter p with gradient g:
//!   g ← g + weight_decay · p
//!   v ← momentum · v + g
//!   p ← p − lr · v
//!
//! Epoch shuffles derive from (seed, epoch), so a run is reproducible and
//! independent of anything outside this function.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::nn::Network;
use crate::ops::{OpSpec, Reduction};
use crate::rng::DetRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Stop after any epoch whose validation accuracy reaches this level.
    pub stop_at_val_acc: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 64,
            lr: 0.08,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            stop_at_val_acc: Some(0.995),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 && self.epochs > 0 {
            // lr == 0 is allowed: it is the documented no-op configuration
            if self.lr < 0.0 {
                return Err(Error::InvalidArg {
                    op: "train",
                    detail: alloc::format!("learning rate {} < 0", self.lr),
                });
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArg { op: "train", detail: "batch size must be ≥ 1".into() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    /// (mean train loss, validation accuracy) per completed epoch.
    pub epochs: Vec<(f32, f32)>,
}

impl TrainHistory {
    pub fn final_val_acc(&self) -> Option<f32> {
        self.epochs.last().map(|&(_, acc)| acc)
    }
}

/// One optimizer step over explicit (param, grad, velocity) triples.
/// Exposed for closed-form verification.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    velocity: &mut [Tensor],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) {
    for i in 0..params.len() {
        let p = params[i].data_mut();
        let v = velocity[i].data_mut();
        match &grads[i] {
            Some(g) => {
                for j in 0..p.len() {
                    let gj = g.data()[j] + weight_decay * p[j];
                    v[j] = momentum * v[j] + gj;
                    p[j] -= lr * v[j];
                }
            }
            None => {
                // unreached parameter: gradient is zero, momentum still decays
                for j in 0..p.len() {
                    let gj = weight_decay * p[j];
                    v[j] = momentum * v[j] + gj;
                    p[j] -= lr * v[j];
                }
            }
        }
    }
}

/// Train in place; returns the per-epoch history.
pub fn train(
    net: &mut Network,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::EmptyInput { what: "training dataset" });
    }
    if train_ds.classes > net.classes {
        return Err(Error::InvalidArg {
            op: "train",
            detail: alloc::format!(
                "dataset has {} classes, network emits {}",
                train_ds.classes,
                net.classes
            ),
        });
    }
    let mut velocity: Vec<Tensor> =
        net.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut history = TrainHistory::default();
    let n = train_ds.len();
    let (c, h, w) = train_ds.image_dims();
    let per = c * h * w;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        DetRng::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0f32;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // gather the minibatch
            let mut data = Vec::with_capacity(chunk.len() * per);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(&train_ds.images.data()[i * per..(i + 1) * per]);
                labels.push(train_ds.labels[i]);
            }
            let batch = Tensor::new(alloc::vec![chunk.len(), c, h, w], data)?;

            let mut tape = Tape::new();
            let xi = tape.input(batch);
            let (logits, param_ids) = net.forward_on_tape(&mut tape, xi)?;
            let loss_id = tape.apply(
                OpSpec::SoftmaxCrossEntropy { labels, reduction: Reduction::Mean },
                &[logits],
            )?;
            let loss = tape.value(loss_id).item()?;
            if !loss.is_finite() {
                return Err(Error::TrainDiverged { epoch, batch: bi });
            }
            loss_sum += loss;
            batches += 1;

            let mut grads = tape.backward(loss_id)?;
            let grad_list: Vec<Option<Tensor>> =
                param_ids.iter().map(|&id| grads.take(id)).collect();
            let mut params: Vec<Tensor> =
                net.params().iter().map(|(_, t)| t.clone()).collect();
            sgd_step(&mut params, &grad_list, &mut velocity, cfg.lr, cfg.momentum, cfg.weight_decay);
            for (i, p) in params.into_iter().enumerate() {
                net.set_param_by_index(i, p);
            }
        }
        let val_acc = eval::accuracy(net, val_ds)?;
        history.epochs.push((loss_sum / batches as f32, val_acc));
        if let Some(target) = cfg.stop_at_val_acc {
            if val_acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

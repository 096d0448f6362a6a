//! Dense training of the base model before any pruning.
//!
//! Produces the unpruned reference whose weights later serve as `W₀` for
//! both pruning and distillation. Every weight and bias is trained with
//! Adam on the task loss; masks are ignored (they are all-ones at this stage).

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::lora::{AdamParams, Moments};
use crate::model::{GradientSet, ToyVlm, WeightMode};
use crate::numeric::Rng;
use crate::objectives::task_loss;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decoupled weight decay on weight matrices (not biases).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 1e-2,
            epochs: 40,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "pretraining needs a positive learning rate and batch size".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be finite and non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Returns the mean task loss of each epoch.
pub fn pretrain(model: &mut ToyVlm, data: &[Sample], cfg: &PretrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if model
        .layers()
        .iter()
        .any(|l| l.adapter.is_some() || l.mask.count_zeros() > 0)
    {
        return Err(Error::State("pretraining expects an unpruned model without adapters".into()));
    }
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let hp = AdamParams::default();
    let mut moments: Vec<(Moments, Moments)> = model
        .layers()
        .iter()
        .map(|l| (Moments::zeros(l.w0.len()), Moments::zeros(l.bias.len())))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut t = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        Rng::derive(cfg.seed, 0xBA5E_0000 + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, g) = loss_and_gradient(model, &batch)?;
            loss_sum += loss;
            t += 1;
            for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
                let (mw, mb) = &mut moments[idx];
                if cfg.weight_decay > 0.0 {
                    let shrink = 1.0 - cfg.lr * cfg.weight_decay;
                    for w in layer.w0.as_mut_slice() {
                        *w *= shrink;
                    }
                }
                mw.adam_step(layer.w0.as_mut_slice(), g.weights[idx].as_slice(), cfg.lr, t, &hp);
                mb.adam_step(&mut layer.bias, &g.biases[idx], cfg.lr, t, &hp);
            }
        }
        history.push(loss_sum / data.len() as f64);
    }
    Ok(history)
}

/// Summed task loss and mean gradient over one batch.
fn loss_and_gradient(model: &ToyVlm, batch: &[Sample]) -> Result<(f64, GradientSet)> {
    let view = model.view(WeightMode::MaskedStudent);
    let mut grads = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    for s in batch {
        let (logits, tape) = model.forward_view(&view, &s.vision_in, &s.text_in)?;
        let (l, dlogits) = task_loss(&logits, s.label)?;
        loss += l;
        grads.add_assign(&model.backward(&tape, &dlogits)?);
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((loss, grads))
}

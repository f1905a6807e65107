use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Tape};
use crate::seed;
use crate::tensor::Tensor;

use super::{Model, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Learning rate is multiplied by this every `decay_every` iterations.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Training crops are taken at a random offset from the image padded by
    /// this many zero pixels per side; 0 disables the augmentation.
    pub crop_pad: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            decay_factor: 0.1,
            decay_every: 2000,
            iterations: 6000,
            seed: 0,
            crop_pad: 3,
        }
    }
}

impl TrainConfig {
    /// Large-scale schedule: lr 0.001, batch 64, ×0.1 every 10K of 30K iterations.
    pub fn large_scale() -> Self {
        TrainConfig { learning_rate: 0.001, batch_size: 64, decay_every: 10_000, iterations: 30_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay interval must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((iteration / self.decay_every) as i32)
    }
}

/// Loss history of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iteration_loss: Vec<f64>,
    pub epoch_loss: Vec<f64>,
    pub final_accuracy: Option<f64>,
}

pub fn train(dataset: &[LabeledImage], spec: &ModelSpec, cfg: &TrainConfig) -> Result<Model> {
    train_with_trace(dataset, spec, cfg).map(|(m, _)| m)
}

/// Minibatch SGD with momentum on softmax cross-entropy. Deterministic for a
/// given `cfg.seed`.
pub fn train_with_trace(dataset: &[LabeledImage], spec: &ModelSpec, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut model = Model::new(spec.clone(), seed::derive(cfg.seed, "init"))?;
    for s in dataset {
        model.check_input(&s.image)?;
        if s.label >= spec.classes {
            return Err(Error::config(format!("label {} out of range for {} classes", s.label, spec.classes)));
        }
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "batches"));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut trace = TrainTrace::default();
    let (mut epoch_sum, mut epoch_batches) = (0.0, 0usize);
    let mut tape = Tape::new();
    let side = spec.input_size;
    let chw = spec.in_channels * side * side;

    for it in 0..cfg.iterations {
        let bs = cfg.batch_size.min(dataset.len());
        let mut batch = Vec::with_capacity(bs * chw);
        let mut labels = Vec::with_capacity(bs);
        for _ in 0..bs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
                trace.epoch_loss.push(epoch_sum / epoch_batches.max(1) as f64);
                epoch_sum = 0.0;
                epoch_batches = 0;
            }
            let s = &dataset[order[cursor]];
            cursor += 1;
            if cfg.crop_pad > 0 {
                let dy = rng.gen_range(0..=2 * cfg.crop_pad);
                let dx = rng.gen_range(0..=2 * cfg.crop_pad);
                batch.extend_from_slice(s.image.pad(cfg.crop_pad).crop(dy, dx, side, side)?.data());
            } else {
                batch.extend_from_slice(s.image.data());
            }
            labels.push(s.label);
        }
        let x = Tensor::new(&[bs, spec.in_channels, side, side], batch)?;
        let logits = model.net.forward_tape(&x, &mut tape)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let lr = cfg.lr_at(it);
        if !loss.is_finite() {
            return Err(Error::NanLoss { iteration: it, lr, loss });
        }
        model.net.backward(&tape, &dlogits)?;
        model.net.sgd_step(lr as f32, cfg.momentum as f32);
        trace.iteration_loss.push(loss);
        epoch_sum += loss;
        epoch_batches += 1;
    }
    if epoch_batches > 0 {
        trace.epoch_loss.push(epoch_sum / epoch_batches as f64);
    }
    Ok((model, trace))
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, dataset: &[LabeledImage]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::arg("accuracy of an empty set"));
    }
    let mut correct = 0usize;
    for s in dataset {
        if model.predict(&s.image)?.argmax() == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

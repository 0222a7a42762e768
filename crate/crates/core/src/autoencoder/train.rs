use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Autoencoder;
use crate::error::{contract, Error, Result};
use crate::ops::{self, AdamConfig};
use crate::pipeline::{random_crop, ImageRecord, Label};
use crate::rng::stream;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop: usize,
    /// Random crops drawn from every training image per epoch.
    pub crops_per_image: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            crop: 64,
            crops_per_image: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out loss before training, then after each epoch. Empty when no
    /// held-out patches were given.
    pub holdout_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mean reconstruction loss over fixed patches.
pub fn holdout_loss(model: &Autoencoder, patches: &[Tensor4]) -> Result<f64> {
    if patches.is_empty() {
        return Err(contract("empty held-out patch set"));
    }
    let mut total = 0.0;
    for chunk in patches.chunks(32) {
        let batch = Tensor4::stack(chunk)?;
        total += model.reconstruction_loss(&batch)? * chunk.len() as f64;
    }
    Ok(total / patches.len() as f64)
}

/// Train on random crops of normalized normal images with L2 loss and Adam.
///
/// Single-threaded and fully determined by `seed`.
pub fn train(
    model: &mut Autoencoder,
    images: &[ImageRecord],
    holdout: &[Tensor4],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if let Some(bad) = images.iter().find(|i| i.label != Label::Normal) {
        return Err(contract(format!(
            "training images must be labeled normal; {} is {}",
            bad.id,
            bad.label.as_str()
        )));
    }
    if cfg.epochs > 0 && images.is_empty() {
        return Err(contract("no training images"));
    }
    if cfg.batch_size == 0 || cfg.crops_per_image == 0 {
        return Err(contract("batch_size and crops_per_image must be positive"));
    }
    if model.arch.with_linear_head && cfg.crop != model.arch.head_input_side {
        return Err(contract(format!(
            "crop {} does not match the linear head input side {}",
            cfg.crop, model.arch.head_input_side
        )));
    }

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = stream(seed, "train");
    let mut report = TrainReport {
        seed,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        holdout_losses: Vec::new(),
        steps: 0,
    };
    if !holdout.is_empty() {
        report.holdout_losses.push(holdout_loss(model, holdout)?);
    }

    let mut order: Vec<usize> = (0..images.len())
        .flat_map(|i| std::iter::repeat_n(i, cfg.crops_per_image))
        .collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let crops = chunk
                .iter()
                .map(|&i| random_crop(&images[i], cfg.crop, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = Tensor4::stack(&crops)?;
            let trace = model.forward_trace(&batch)?;
            let loss = ops::l2_loss(&trace.output, &batch)? as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {} step {}; check the learning rate and initialization",
                    epoch + 1,
                    report.steps + 1
                )));
            }
            let grad = ops::l2_loss_backward(&trace.output, &batch)?;
            model.backward(trace, grad)?;
            ops::adam_step(model.params_mut(), &adam);
            report.steps += 1;
            sum += loss * chunk.len() as f64;
        }
        report.epoch_losses.push(sum / order.len() as f64);
        if !holdout.is_empty() {
            report.holdout_losses.push(holdout_loss(model, holdout)?);
        }
    }

    model.train_meta.seed = seed;
    model.train_meta.epochs += cfg.epochs;
    model.train_meta.steps += report.steps;
    if let Some(l) = report.final_loss() {
        model.train_meta.final_loss = Some(l);
    }
    Ok(report)
}

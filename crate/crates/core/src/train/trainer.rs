use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::augment::augment;
use super::optim::Adam;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::loss::{one_hot, weighted_dice_loss, weighted_dice_loss_with_grad};
use crate::nn::{IndexBatch, ResUNet, Tensor4};
use crate::preprocess::{DatasetSplit, PatchSample};
use crate::rng;

const ORDER_STREAM: u64 = 0x4f52_4452;
const AUGMENT_STREAM: u64 = 0x4155_4730;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean weighted Dice loss over the epoch's batches (penalty excluded).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    /// `epoch,train_loss,val_loss,seconds`; a missing validation loss is left blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.9},{},{:.3}", r.epoch, r.train_loss, val, r.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::create_parent(path)?;
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// The seeded visiting order of `n` training samples in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[ORDER_STREAM, epoch as u64]));
    order
}

/// Stacks samples into an image batch and a one-hot target.
pub fn batch_tensors(samples: &[&PatchSample], classes: usize) -> Result<(Tensor4, Tensor4)> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().map(|s| &s.mask).collect();
    let x = Tensor4::from_planes(&images)?;
    let y = one_hot(&IndexBatch::from_planes(&masks)?, classes)?;
    Ok((x, y))
}

/// One optimisation step on a batch; returns the batch loss before the update.
/// A non-finite loss leaves the weights untouched.
pub fn train_step(net: &mut ResUNet, opt: &mut Adam, x: &Tensor4, target: &Tensor4) -> Result<f64> {
    let probs = net.forward_train(x)?;
    let (loss, grad) = weighted_dice_loss_with_grad(&probs, target)?;
    if !loss.is_finite() || !probs.all_finite() {
        net.clear_cache();
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: opt.steps() as usize + 1,
            value: loss,
        });
    }
    net.backward(&grad);
    if net.params().iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
        net.zero_grad();
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: opt.steps() as usize + 1,
            value: f64::NAN,
        });
    }
    opt.step(net);
    Ok(loss)
}

/// Mean batch loss in inference mode (running normalisation statistics).
pub fn evaluate_loss(net: &ResUNet, samples: &[PatchSample], batch_size: usize) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let classes = net.config().n_classes;
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, classes)?;
        total += weighted_dice_loss(&net.forward(&x)?, &y)?;
        batches += 1;
    }
    Ok(Some(total / batches as f64))
}

/// Trains `net` on `split.train`, reporting validation loss on `split.val` each epoch.
pub fn train_model(net: ResUNet, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ResUNet, TrainHistory)> {
    train_model_with(net, split, cfg, &mut |_| {})
}

/// [`train_model`] with a callback after every epoch.
pub fn train_model_with(
    mut net: ResUNet,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ResUNet, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let classes = net.config().n_classes;
    let exec = net.execution();
    let mut opt = Adam::new(&net, cfg.learning_rate, cfg.l2_strength, cfg.adam);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ResUNet)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(split.train.len(), cfg.seed, epoch);
        let (mut total, mut batches) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<PatchSample> = if cfg.augment.is_identity() {
                idx.iter().map(|&i| split.train[i].clone()).collect()
            } else {
                exec.map(idx, |&i| {
                    let mut r = rng::stream(cfg.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    augment(&split.train[i], &cfg.augment, &mut r)
                })
            };
            let refs: Vec<&PatchSample> = samples.iter().collect();
            let (x, y) = batch_tensors(&refs, classes)?;
            let loss = train_step(&mut net, &mut opt, &x, &y).map_err(|e| match e {
                Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: b + 1,
                    value,
                },
                other => other,
            })?;
            total += loss;
            batches += 1;
        }
        let val_loss = evaluate_loss(&net, &split.val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / batches as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
        if cfg.keep_best {
            if let Some(v) = val_loss {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, net.clone()));
                }
            }
        }
    }
    let net = match best {
        Some((_, n)) => n,
        None => net,
    };
    Ok((net, history))
}

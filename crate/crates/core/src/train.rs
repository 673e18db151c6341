//! Mini-batch training with momentum SGD and on-the-fly augmentation.
//!
//! Every random choice derives from [`TrainConfig::seed`]: parameter init,
//! the per-epoch shuffle, and each augmentation draw. Two runs that differ
//! only in `with_gal` therefore see the same data in the same order.

use rand::seq::SliceRandom;

use crate::data::{augment, ClassMask, SegSample};
use crate::error::{Error, Result};
use crate::kfold::{Predictor, Trainer};
use crate::net::{infer, net_forward, predict, NetConfig, NetParams};
use crate::optim::sgdm_step;
use crate::seed::{self, stream};
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_LR: f32 = 0.01;
    pub const DEFAULT_MOMENTUM: f32 = 0.9;
    pub const DEFAULT_BATCH: usize = 2;

    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr: Self::DEFAULT_LR,
            momentum: Self::DEFAULT_MOMENTUM,
            batch_size: Self::DEFAULT_BATCH,
            augment: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }
}

/// Mean cross-entropy of one sample and its gradient, accumulated into
/// `params`' gradient buffers.
pub fn accumulate_sample(params: &mut NetParams<f32>, sample: &SegSample) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(sample.image.clone());
    let vars = params.bind(&mut tape);
    let out = net_forward(&mut tape, x, params, &vars)?;
    let loss = tape.softmax_cross_entropy(out.logits, sample.label.data())?;
    let grads = tape.backward(loss)?;
    params.accumulate(&grads, &vars);
    Ok(tape.value(loss).data()[0] as f64)
}

/// Mean loss over `samples` at the current parameters.
pub fn mean_loss(params: &NetParams<f32>, samples: &[&SegSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let x = tape.leaf(s.image.clone());
        let vars = params.bind(&mut tape);
        let out = net_forward(&mut tape, x, params, &vars)?;
        let loss = tape.softmax_cross_entropy(out.logits, s.label.data())?;
        total += tape.value(loss).data()[0] as f64;
    }
    Ok(total / samples.len() as f64)
}

/// One momentum step on the averaged gradient of `batch`. Returns the mean
/// pre-step loss.
pub fn train_step(params: &mut NetParams<f32>, batch: &[SegSample], lr: f32, momentum: f32) -> Result<f64> {
    params.zero_grad();
    let mut loss = 0.0;
    for s in batch {
        loss += accumulate_sample(params, s)?;
    }
    let scale = 1.0 / batch.len() as f32;
    let mut named = params.named_mut();
    named.iter_mut().for_each(|(_, p)| p.scale_grad(scale));
    sgdm_step(named.into_iter().map(|(_, p)| p), lr, momentum);
    Ok(loss / batch.len() as f64)
}

/// Trains a fresh network. `on_epoch(epoch, mean_loss)` runs after each
/// epoch, epochs counted from 1.
pub fn train(
    net: NetConfig,
    cfg: &TrainConfig,
    samples: &[&SegSample],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<NetParams<f32>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Value("no training samples".into()));
    }
    let mut params = NetParams::init(NetConfig { seed: cfg.seed, ..net })?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let shuffle_base = seed::derive(cfg.seed, stream::SHUFFLE);
    let augment_base = seed::derive(cfg.seed, stream::AUGMENT);
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(shuffle_base, epoch as u64)));
        let epoch_aug = seed::derive(augment_base, epoch as u64);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SegSample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(samples[i], seed::derive(epoch_aug, i as u64))
                    } else {
                        samples[i].clone()
                    }
                })
                .collect();
            total += train_step(&mut params, &batch, cfg.lr, cfg.momentum)? * batch.len() as f64;
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Value(format!("training diverged at epoch {epoch}")));
        }
        on_epoch(epoch, mean);
    }
    params.zero_grad();
    Ok(params)
}

impl Predictor for NetParams<f32> {
    fn predict(&self, sample: &SegSample) -> Result<ClassMask> {
        predict(&infer(self, &sample.image)?.1)
    }
}

/// Trains one network per fold. The fold index is mixed into the seed, so
/// paired runs share every fold's init and data order.
#[derive(Clone, Copy, Debug)]
pub struct NetTrainer {
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl NetTrainer {
    pub fn fold_seed(&self, fold: usize) -> u64 {
        seed::derive(seed::derive(self.train.seed, stream::FOLD), fold as u64)
    }
}

impl Trainer for NetTrainer {
    type Model = NetParams<f32>;
    fn fit(&self, fold: usize, train_set: &[&SegSample]) -> Result<NetParams<f32>> {
        let cfg = TrainConfig { seed: self.fold_seed(fold), ..self.train };
        train(self.net, &cfg, train_set, |_, _| {})
    }
}

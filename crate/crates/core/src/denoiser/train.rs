use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{Affine, AugmentConfig};
use super::optim::AdamW;
use super::unet::mse_with_grad;
use super::DenoiserModel;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::schedule::{forward_diffuse, NoiseSchedule};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
}

impl TrainConfig {
    /// MNIST optimizer settings from the reference hyperparameter table.
    pub fn mnist() -> Self {
        Self {
            epochs: 3000,
            batch_size: 64,
            learning_rate: 8.6e-4,
            weight_decay: 4.2e-3,
            beta1: 0.73,
            checkpoint_interval: 100,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0)
        {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Config(format!(
                "beta1 must lie in (0,1), got {}",
                self.beta1
            )));
        }
        if self.checkpoint_interval == 0
            || (self.epochs > 0 && self.checkpoint_interval > self.epochs)
        {
            return Err(Error::Config(format!(
                "checkpoint interval {} must be in 1..={}",
                self.checkpoint_interval, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

pub enum TrainEvent<'a> {
    Epoch(EpochLoss),
    /// Emitted after every `checkpoint_interval` epochs and after the last one.
    Checkpoint {
        epoch: usize,
        model: &'a DenoiserModel,
        trainer: &'a Trainer,
    },
}

/// Optimizer state and loss history; everything needed to resume a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub history: Vec<EpochLoss>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &DenoiserModel) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(
            model.params().len(),
            config.learning_rate as f32,
            config.beta1 as f32,
            config.weight_decay as f32,
        );
        Ok(Self {
            config,
            optimizer,
            history: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Runs epochs `epochs_done()+1 ..= config.epochs`.
    pub fn run(
        &mut self,
        model: &mut DenoiserModel,
        dataset: &[Tensor],
        sched: &NoiseSchedule,
        mut observe: impl FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<()> {
        self.config.validate()?;
        if self.config.epochs <= self.epochs_done() {
            return Ok(());
        }
        if dataset.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let shape = model.image_shape();
        for img in dataset {
            img.ensure_shape(&shape)?;
        }
        if self.optimizer.m.len() != model.params().len() {
            return Err(Error::Argument(
                "optimizer state does not match the model".into(),
            ));
        }
        let mut grads = vec![0.0f32; model.params().len()];
        for epoch in self.epochs_done() + 1..=self.config.epochs {
            let mean_loss = self.run_epoch(model, dataset, sched, epoch, &mut grads)?;
            let rec = EpochLoss { epoch, mean_loss };
            self.history.push(rec);
            observe(TrainEvent::Epoch(rec))?;
            if epoch % self.config.checkpoint_interval == 0 || epoch == self.config.epochs {
                observe(TrainEvent::Checkpoint {
                    epoch,
                    model,
                    trainer: self,
                })?;
            }
        }
        Ok(())
    }

    fn run_epoch(
        &mut self,
        model: &mut DenoiserModel,
        dataset: &[Tensor],
        sched: &NoiseSchedule,
        epoch: usize,
        grads: &mut [f32],
    ) -> Result<f64> {
        let cfg = &self.config;
        let mut rng = rng::stream(cfg.seed, Purpose::Training, &[epoch as u64]);
        let mut aug_rng = rng::stream(cfg.seed, Purpose::Augment, &[epoch as u64]);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let shape = model.image_shape();
        let steps = sched.steps();
        let mut total = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let weight = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let x0 = match &cfg.augment {
                    Some(a) => Affine::sample(a, shape[1], shape[2], &mut aug_rng)
                        .apply(&dataset[i], a.fill),
                    None => dataset[i].clone(),
                };
                let t = rng.random_range(1..=steps);
                let eps = Tensor::randn(&shape, &mut rng);
                let xt = forward_diffuse(&x0, t, &eps, sched)?;
                let (pred, cache) = model.net().forward_train(model.params(), xt.data(), t);
                let (loss, dpred) = mse_with_grad(&pred, eps.data(), weight);
                batch_loss += f64::from(loss);
                model.net().backward(model.params(), grads, &cache, &dpred);
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    param_norm: model.param_norm(),
                });
            }
            self.optimizer.update(model.params_mut(), grads);
            if !model.params_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    param_norm: model.param_norm(),
                });
            }
            // batch_loss is the batch mean
            total += batch_loss * batch.len() as f64;
        }
        Ok(total / dataset.len() as f64)
    }
}

/// Trains from scratch and returns the per-epoch loss history.
pub fn train(
    model: &mut DenoiserModel,
    dataset: &[Tensor],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    trainer.run(model, dataset, sched, |_| Ok(()))?;
    Ok(trainer.history)
}

/// `epoch,mean_loss` rows.
pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for r in history {
        out.push_str(&format!("{},{}\n", r.epoch, r.mean_loss));
    }
    out
}

pub fn parse_loss_history_csv(text: &str) -> Result<Vec<EpochLoss>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("epoch") {
            continue;
        }
        let bad = || Error::format("loss history", i as u64, format!("bad row {line:?}"));
        let (e, l) = line.split_once(',').ok_or_else(bad)?;
        out.push(EpochLoss {
            epoch: e.trim().parse().map_err(|_| bad())?,
            mean_loss: l.trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

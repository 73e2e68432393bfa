use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::batch_mels;
use super::{gce_loss_tensor, soft_labels_with, PredictorConfig, RatePredictorModel};
use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, scalar_f64, write_checkpoint, AdamW, Checkpoint, WarmupLinear};
use crate::units::Granularity;

const CHECKPOINT_KIND: &str = "rate_predictor";

/// A mel clip labelled with its speaking rate in units per second.
#[derive(Debug, Clone)]
pub struct RateExample {
    pub mel: MelSpectrogram,
    pub true_rate: f64,
    pub granularity: Granularity,
}

impl RateExample {
    pub fn new(mel: MelSpectrogram, true_rate: f64, granularity: Granularity) -> Result<Self> {
        if !(true_rate > 0.0 && true_rate.is_finite()) {
            return Err(Error::InvalidRate(true_rate));
        }
        Ok(Self {
            mel,
            true_rate,
            granularity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Fraction of all optimizer steps spent warming up.
    pub warmup_frac: f64,
    pub weight_decay: f64,
    /// Clips longer than the upper bound are cropped to a random window
    /// whose length is drawn uniformly from this range (seconds).
    pub crop_seconds: Option<(f64, f64)>,
}

impl Default for RateTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            peak_lr: 1e-3,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            crop_seconds: Some((3.0, 8.0)),
        }
    }
}

/// Stateful trainer: one call to [`run_epoch`](Self::run_epoch) per epoch,
/// checkpointable between epochs.
pub struct RateTrainer {
    model: RatePredictorModel,
    opt: AdamW,
    schedule: WarmupLinear,
    options: RateTrainOptions,
    seed: u64,
    losses: Vec<f64>,
}

fn check_dataset(dataset: &[RateExample], cfg: &PredictorConfig) -> Result<()> {
    let Some(first) = dataset.first() else {
        return Err(Error::InvalidInput("rate training set is empty".into()));
    };
    if let Some(other) = dataset.iter().find(|e| e.granularity != first.granularity) {
        return Err(Error::InvalidDataset(
            first.granularity.to_string(),
            other.granularity.to_string(),
        ));
    }
    if first.granularity != cfg.granularity {
        return Err(Error::InvalidDataset(
            cfg.granularity.to_string(),
            first.granularity.to_string(),
        ));
    }
    Ok(())
}

impl RateTrainer {
    pub fn new(
        cfg: PredictorConfig,
        options: RateTrainOptions,
        n_examples: usize,
        seed: u64,
        device: &Device,
    ) -> Result<Self> {
        if options.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let model = RatePredictorModel::new(cfg, seed, device)?;
        let opt = AdamW::new(model.params(), options.weight_decay)?;
        let steps_per_epoch = n_examples.div_ceil(options.batch_size).max(1);
        let total_steps = steps_per_epoch * options.epochs.max(1);
        let schedule = WarmupLinear {
            peak_lr: options.peak_lr,
            warmup_steps: ((total_steps as f64 * options.warmup_frac).round() as usize).max(1),
            total_steps,
        };
        Ok(Self {
            model,
            opt,
            schedule,
            options,
            seed,
            losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &RatePredictorModel {
        &self.model
    }

    pub fn into_model(self) -> RatePredictorModel {
        self.model
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn epochs_done(&self) -> usize {
        self.losses.len()
    }

    pub fn step(&self) -> usize {
        self.opt.step_count()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.options.epochs
    }

    /// Runs one epoch and returns its mean GCE loss per example.
    pub fn run_epoch(&mut self, dataset: &[RateExample]) -> Result<f64> {
        check_dataset(dataset, self.model.config())?;
        let epoch = self.epochs_done();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let cfg = self.model.config().clone();
        let categories = self.model.categories().clone();
        let mut total = 0.0;
        for chunk in order.chunks(self.options.batch_size) {
            let crops = chunk
                .iter()
                .map(|&i| crop(&dataset[i].mel, self.options.crop_seconds, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&MelSpectrogram> = crops.iter().collect();
            let (x, mask) = batch_mels(&refs, cfg.mel.n_mels, self.model.device())?;
            let mut soft = Vec::with_capacity(chunk.len() * categories.n_classes);
            for &i in chunk {
                let c = categories.rate_to_category(dataset[i].true_rate)?;
                soft.extend(
                    soft_labels_with(c, categories.n_classes, cfg.sigma, cfg.normalize_labels)
                        .into_iter()
                        .map(|v| v as f32),
                );
            }
            let soft = Tensor::from_vec(
                soft,
                (chunk.len(), categories.n_classes),
                self.model.device(),
            )?;
            let logits = self.model.logits(&x, &mask, Some(&mut rng))?;
            let loss = gce_loss_tensor(&logits, &soft)?;
            let lr = self.schedule.lr(self.opt.step_count());
            self.opt.step(&loss.backward()?, lr)?;
            total += scalar_f64(&loss)? * chunk.len() as f64;
        }
        let mean = total / dataset.len() as f64;
        self.losses.push(mean);
        Ok(mean)
    }

    /// Runs the remaining epochs.
    pub fn train(&mut self, dataset: &[RateExample]) -> Result<&[f64]> {
        while !self.is_finished() {
            self.run_epoch(dataset)?;
        }
        Ok(&self.losses)
    }

    /// Writes model, optimizer moments and progress.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.model.params().snapshot()?;
        let (step, adam) = self.opt.state();
        tensors.extend(adam);
        let header = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.model.config(),
            "options": self.options,
            "schedule": self.schedule,
            "seed": self.seed,
            "step": step,
            "losses": self.losses,
        });
        write_checkpoint(path, &Checkpoint { header, tensors })
    }

    /// Restores a trainer written by [`save`](Self::save); continuing it
    /// reproduces an uninterrupted run.
    pub fn resume(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let ckpt = read_checkpoint(path, device)?;
        let cfg: PredictorConfig = ckpt.field("config")?;
        let options: RateTrainOptions = ckpt.field("options")?;
        let schedule: WarmupLinear = ckpt.field("schedule")?;
        let seed: u64 = ckpt.field("seed")?;
        let step: usize = ckpt.field("step")?;
        let losses: Vec<f64> = ckpt.field("losses")?;
        let model = RatePredictorModel::new(cfg, seed, device)?;
        model.params().load(&ckpt.tensors)?;
        let mut opt = AdamW::new(model.params(), options.weight_decay)?;
        opt.load_state(step, &ckpt.tensors)?;
        Ok(Self {
            model,
            opt,
            schedule,
            options,
            seed,
            losses,
        })
    }
}

fn check_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    let found: String = ckpt.field("kind")?;
    if found != kind {
        return Err(Error::Config(format!(
            "expected a {kind} checkpoint, found {found}"
        )));
    }
    Ok(())
}

impl RatePredictorModel {
    /// Writes weights and config (no optimizer state).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.config(),
            "step": 0,
        });
        let tensors: BTreeMap<String, Tensor> = self.params().snapshot()?;
        write_checkpoint(path, &Checkpoint { header, tensors })
    }

    /// Loads weights from a model or trainer checkpoint.
    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let ckpt = read_checkpoint(path, device)?;
        check_kind(&ckpt, CHECKPOINT_KIND)?;
        let cfg: PredictorConfig = ckpt.field("config")?;
        let model = RatePredictorModel::new(cfg, 0, device)?;
        model.params().load(&ckpt.tensors)?;
        Ok(model)
    }
}

fn crop(
    mel: &MelSpectrogram,
    range: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<MelSpectrogram> {
    let Some((lo, hi)) = range else {
        return Ok(mel.clone());
    };
    let cfg = mel.config();
    let max_frames = cfg.seconds_to_frames(hi);
    if mel.n_frames() <= max_frames {
        return Ok(mel.clone());
    }
    let len = cfg
        .seconds_to_frames(rng.random_range(lo..=hi))
        .clamp(1, mel.n_frames());
    let start = rng.random_range(0..=mel.n_frames() - len);
    mel.slice_frames(start, start + len)
}

/// Trains a fresh predictor for `epochs` epochs with default options.
pub fn train_rate_predictor(
    dataset: &[RateExample],
    cfg: &PredictorConfig,
    epochs: usize,
    seed: u64,
) -> Result<(RatePredictorModel, Vec<f64>)> {
    let options = RateTrainOptions {
        epochs,
        ..RateTrainOptions::default()
    };
    train_rate_predictor_with(dataset, cfg, &options, seed, &Device::Cpu)
}

pub fn train_rate_predictor_with(
    dataset: &[RateExample],
    cfg: &PredictorConfig,
    options: &RateTrainOptions,
    seed: u64,
    device: &Device,
) -> Result<(RatePredictorModel, Vec<f64>)> {
    check_dataset(dataset, cfg)?;
    let mut trainer = RateTrainer::new(cfg.clone(), options.clone(), dataset.len(), seed, device)?;
    trainer.train(dataset)?;
    let losses = trainer.losses().to_vec();
    Ok((trainer.into_model(), losses))
}

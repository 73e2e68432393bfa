use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{ids_tensor, CHECKPOINT_KIND};
use super::{InfillCond, InfillConfig, InfillModel, TTSTrainExample, Vocab};
use crate::cfm::{masked_mse, ot_interpolate_batch, sample_flow_step, LatentPair};
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, scalar_f64, write_checkpoint, AdamW, Checkpoint, WarmupLinear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtsTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
}

impl Default for TtsTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 4,
            peak_lr: 1e-3,
            warmup_frac: 0.05,
            weight_decay: 0.01,
        }
    }
}

/// Epoch-wise infilling trainer with checkpoint and resume.
pub struct TtsTrainer {
    model: InfillModel,
    opt: AdamW,
    schedule: WarmupLinear,
    options: TtsTrainOptions,
    seed: u64,
    losses: Vec<f64>,
}

impl TtsTrainer {
    pub fn new(
        config: InfillConfig,
        vocab: Vocab,
        options: TtsTrainOptions,
        n_examples: usize,
        seed: u64,
        device: &Device,
    ) -> Result<Self> {
        if options.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let model = InfillModel::new(config, vocab, seed, device)?;
        let opt = AdamW::new(model.params(), options.weight_decay)?;
        let total_steps = n_examples.div_ceil(options.batch_size).max(1) * options.epochs.max(1);
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

    pub fn model(&self) -> &InfillModel {
        &self.model
    }

    pub fn into_model(self) -> InfillModel {
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

    /// One pass over `corpus`; returns the mean masked flow-matching loss
    /// per example.
    pub fn run_epoch(&mut self, corpus: &[TTSTrainExample]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("TTS training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epochs_done() as u64 + 1);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.options.batch_size) {
            let batch: Vec<&TTSTrainExample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let loss = self.batch_loss(&batch, &mut rng, true)?;
            let lr = self.schedule.lr(self.opt.step_count());
            self.opt.step(&loss.backward()?, lr)?;
            total += scalar_f64(&loss)? * batch.len() as f64;
        }
        let mean = total / corpus.len() as f64;
        self.losses.push(mean);
        Ok(mean)
    }

    /// Masked flow-matching loss on one batch. With `train`, dropout and
    /// text dropping are active.
    pub fn batch_loss(
        &self,
        batch: &[&TTSTrainExample],
        rng: &mut ChaCha8Rng,
        train: bool,
    ) -> Result<Tensor> {
        let cfg = self.model.config();
        let device = self.model.device();
        let n_mels = cfg.mel.n_mels;
        for ex in batch {
            ex.validate()?;
            if ex.mel.n_mels() != n_mels {
                return Err(Error::ConfigMismatch(format!(
                    "{}: {} mel channels, model expects {n_mels}",
                    ex.utt_id,
                    ex.mel.n_mels()
                )));
            }
        }
        let t_max = batch.iter().map(|e| e.mel.n_frames()).max().unwrap_or(0);
        let b = batch.len();
        let mut x1 = vec![0f32; b * t_max * n_mels];
        let mut context = vec![0f32; b * t_max * n_mels];
        let mut valid = vec![0f32; b * t_max];
        let mut loss_mask = vec![0f32; b * t_max];
        let mut z_rows: Vec<Vec<u32>> = Vec::with_capacity(b);
        for (i, ex) in batch.iter().enumerate() {
            let base = i * t_max * n_mels;
            for (t, &masked) in ex.mask.frames.iter().enumerate() {
                let row = &ex.mel.data()[t * n_mels..(t + 1) * n_mels];
                x1[base + t * n_mels..base + (t + 1) * n_mels].copy_from_slice(row);
                if !masked {
                    context[base + t * n_mels..base + (t + 1) * n_mels].copy_from_slice(row);
                }
                valid[i * t_max + t] = 1.0;
                loss_mask[i * t_max + t] = if masked { 1.0 } else { 0.0 };
            }
            let drop_text = train && rng.random::<f64>() < cfg.text_drop_prob;
            z_rows.push(if drop_text {
                ex.z.blank().ids
            } else {
                ex.z.ids.clone()
            });
        }
        let noise: Vec<f32> = (0..b * t_max * n_mels)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let ts: Vec<f64> = (0..b).map(|_| sample_flow_step(rng).value()).collect();

        let shape = (b, t_max, n_mels);
        let x1 = Tensor::from_vec(x1, shape, device)?;
        let valid = Tensor::from_vec(valid, (b, t_max), device)?;
        let x0 = Tensor::from_vec(noise, shape, device)?.broadcast_mul(&valid.unsqueeze(2)?)?;
        let pair = LatentPair::new(x0, x1)?;
        let x_t = ot_interpolate_batch(&pair, &ts)?;
        let z_refs: Vec<&[u32]> = z_rows.iter().map(Vec::as_slice).collect();
        let cond = InfillCond {
            context: Tensor::from_vec(context, shape, device)?,
            z: ids_tensor(&z_refs, t_max, device)?,
            frame_mask: valid,
        };
        let pred = self
            .model
            .velocity(&x_t, &ts, &cond, if train { Some(rng) } else { None })?;
        let target = (&pair.x1 - &pair.x0)?;
        let loss_mask = Tensor::from_vec(loss_mask, (b, t_max), device)?.to_dtype(DType::F32)?;
        masked_mse(&pred, &target, Some(&loss_mask))
    }

    pub fn train(&mut self, corpus: &[TTSTrainExample]) -> Result<&[f64]> {
        while !self.is_finished() {
            self.run_epoch(corpus)?;
        }
        Ok(&self.losses)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.model.params().snapshot()?;
        let (step, adam) = self.opt.state();
        tensors.extend(adam);
        let header = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.model.config(),
            "vocab": self.model.vocab(),
            "options": self.options,
            "schedule": self.schedule,
            "seed": self.seed,
            "step": step,
            "losses": self.losses,
        });
        write_checkpoint(path, &Checkpoint { header, tensors })
    }

    pub fn resume(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let ckpt = read_checkpoint(path, device)?;
        let model = InfillModel::from_checkpoint(&ckpt, device)?;
        let options: TtsTrainOptions = ckpt.field("options")?;
        let schedule: WarmupLinear = ckpt.field("schedule")?;
        let seed: u64 = ckpt.field("seed")?;
        let step: usize = ckpt.field("step")?;
        let losses: Vec<f64> = ckpt.field("losses")?;
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

/// Trains a fresh model and returns it with its per-epoch loss curve.
pub fn train_tts(
    corpus: &[TTSTrainExample],
    config: &InfillConfig,
    vocab: Vocab,
    options: &TtsTrainOptions,
    seed: u64,
) -> Result<(InfillModel, Vec<f64>)> {
    let mut trainer = TtsTrainer::new(
        config.clone(),
        vocab,
        options.clone(),
        corpus.len(),
        seed,
        &Device::Cpu,
    )?;
    trainer.train(corpus)?;
    let losses = trainer.losses().to_vec();
    Ok((trainer.into_model(), losses))
}

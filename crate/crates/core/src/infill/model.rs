use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{build_extended_sequence, ExtendedCharSeq, Vocab, FILLER};
use crate::audio::{MelConfig, MelSpectrogram};
use crate::cfm::{euler_solve, FlowStep, SamplerConfig, VelocityModel};
use crate::duration::to_frames;
use crate::error::{Error, Result};
use crate::nn::{
    self, read_checkpoint, sinusoidal_positions, timestep_embedding, write_checkpoint, Checkpoint,
    EncoderLayer, LayerNorm, Linear, ParamStore,
};

pub(super) const CHECKPOINT_KIND: &str = "infill_tts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillConfig {
    pub mel: MelConfig,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub ff_mult: usize,
    pub text_dim: usize,
    pub dropout: f64,
    /// Probability of training an example with its text replaced by filler,
    /// which trains the unconditional branch used for guidance.
    pub text_drop_prob: f64,
}

impl InfillConfig {
    /// 4 layers, 4 heads, 192 dims.
    pub fn desk() -> Self {
        Self {
            mel: MelConfig::default(),
            n_layers: 4,
            n_heads: 4,
            d_model: 192,
            ff_mult: 2,
            text_dim: 64,
            dropout: 0.1,
            text_drop_prob: 0.2,
        }
    }

    /// 22 layers, 16 heads, 1024 dims.
    pub fn paper() -> Self {
        Self {
            n_layers: 22,
            n_heads: 16,
            d_model: 1024,
            text_dim: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.text_drop_prob) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(
                "dropout probabilities must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Conditioning for a batch `[B, T]`: the acoustic context (data outside
/// the mask, zero inside), the frame-level text ids and the valid-frame mask.
#[derive(Debug, Clone)]
pub struct InfillCond {
    pub context: Tensor,
    pub z: Tensor,
    pub frame_mask: Tensor,
}

impl InfillCond {
    /// The same conditioning with every text id replaced by filler.
    pub fn without_text(&self) -> Result<Self> {
        Ok(Self {
            z: self.z.zeros_like()?,
            ..self.clone()
        })
    }
}

/// Transformer velocity network over `[x_t ; context ; embed(z)]`.
pub struct InfillModel {
    config: InfillConfig,
    vocab: Vocab,
    params: ParamStore,
    text_embed: Tensor,
    in_proj: Linear,
    time_mlp1: Linear,
    time_mlp2: Linear,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    out_proj: Linear,
}

impl InfillModel {
    pub fn new(config: InfillConfig, vocab: Vocab, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let n_mels = config.mel.n_mels;
        let mut ps = ParamStore::new(seed, device);
        let text_embed = ps.normal("text_embed", &[vocab.size(), config.text_dim], 0.1)?;
        let in_proj = Linear::new(&mut ps, "in_proj", 2 * n_mels + config.text_dim, d)?;
        let time_mlp1 = Linear::new(&mut ps, "time_mlp1", d, d)?;
        let time_mlp2 = Linear::new(&mut ps, "time_mlp2", d, d)?;
        let layers = (0..config.n_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut ps,
                    &format!("layer.{i}"),
                    d,
                    config.n_heads,
                    config.ff_mult,
                    config.dropout,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(&mut ps, "final_norm", d)?;
        // Zero output layer: the untrained field is identically zero.
        let out_proj = Linear::zeros(&mut ps, "out_proj", d, n_mels)?;
        Ok(Self {
            config,
            vocab,
            params: ps,
            text_embed,
            in_proj,
            time_mlp1,
            time_mlp2,
            layers,
            final_norm,
            out_proj,
        })
    }

    pub fn config(&self) -> &InfillConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Velocity `[B, T, n_mels]` for `x_t: [B, T, n_mels]` at per-item
    /// times `ts`. Dropout is active only when `rng` is given.
    pub fn velocity(
        &self,
        x_t: &Tensor,
        ts: &[f64],
        cond: &InfillCond,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, t, c) = x_t.dims3()?;
        if c != self.config.mel.n_mels {
            return Err(Error::ConfigMismatch(format!(
                "model expects {} mel channels, got {c}",
                self.config.mel.n_mels
            )));
        }
        if cond.context.dims() != x_t.dims()
            || cond.z.dims() != [b, t]
            || cond.frame_mask.dims() != [b, t]
        {
            return Err(Error::Shape(format!(
                "x_t {:?}, context {:?}, z {:?}, mask {:?}",
                x_t.dims(),
                cond.context.dims(),
                cond.z.dims(),
                cond.frame_mask.dims()
            )));
        }
        if ts.len() != b {
            return Err(Error::Shape(format!(
                "{} flow steps for a batch of {b}",
                ts.len()
            )));
        }
        let text = self
            .text_embed
            .index_select(&cond.z.flatten_all()?, 0)?
            .reshape((b, t, self.config.text_dim))?;
        let x = Tensor::cat(&[x_t, &cond.context, &text], D::Minus1)?;
        let d = self.config.d_model;
        let mut h = self.in_proj.forward(&x)?;
        h = h.broadcast_add(&sinusoidal_positions(t, d, self.device())?)?;
        let temb = timestep_embedding(ts, d, self.device())?;
        let temb = self
            .time_mlp2
            .forward(&self.time_mlp1.forward(&temb)?.silu()?)?;
        h = h.broadcast_add(&temb.unsqueeze(1)?)?;
        let bias = nn::key_padding_bias(&cond.frame_mask)?;
        for layer in &self.layers {
            h = layer.forward(&h, Some(&bias), rng.as_deref_mut())?;
        }
        let out = self.out_proj.forward(&self.final_norm.forward(&h)?)?;
        nn::apply_frame_mask(&out, Some(&cond.frame_mask))
    }

    /// Writes weights, vocabulary and config.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.config,
            "vocab": self.vocab,
            "step": 0,
        });
        write_checkpoint(
            path,
            &Checkpoint {
                header,
                tensors: self.params.snapshot()?,
            },
        )
    }

    /// Loads weights from a model or trainer checkpoint.
    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let ckpt = read_checkpoint(path, device)?;
        Self::from_checkpoint(&ckpt, device)
    }

    pub(super) fn from_checkpoint(ckpt: &Checkpoint, device: &Device) -> Result<Self> {
        let kind: String = ckpt.field("kind")?;
        if kind != CHECKPOINT_KIND {
            return Err(Error::Config(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {kind}"
            )));
        }
        let config: InfillConfig = ckpt.field("config")?;
        let vocab: Vocab = ckpt.field("vocab")?;
        let model = Self::new(config, vocab, 0, device)?;
        model.params.load(&ckpt.tensors)?;
        Ok(model)
    }
}

impl VelocityModel for InfillModel {
    type Cond = InfillCond;

    fn evaluate(&self, x_t: &Tensor, t: FlowStep, cond: &InfillCond) -> Result<Tensor> {
        let b = x_t.dim(0)?;
        self.velocity(x_t, &vec![t.value(); b], cond, None)
    }

    /// Text dropped, acoustic context kept.
    fn evaluate_unconditional(
        &self,
        x_t: &Tensor,
        t: FlowStep,
        cond: &InfillCond,
    ) -> Result<Tensor> {
        self.evaluate(x_t, t, &cond.without_text()?)
    }
}

pub(super) fn ids_tensor(rows: &[&[u32]], t_max: usize, device: &Device) -> Result<Tensor> {
    let mut data = vec![FILLER; rows.len() * t_max];
    for (i, row) in rows.iter().enumerate() {
        data[i * t_max..i * t_max + row.len()].copy_from_slice(row);
    }
    Ok(Tensor::from_vec(data, (rows.len(), t_max), device)?)
}

/// Single-item forward on `[T, n_mels]` tensors in inference mode.
pub fn infill_forward(
    model: &InfillModel,
    x_t: &Tensor,
    acoustic_context: &Tensor,
    z: &ExtendedCharSeq,
    t: FlowStep,
) -> Result<Tensor> {
    let (frames, _) = x_t.dims2()?;
    if z.len() != frames {
        return Err(Error::Shape(format!(
            "z has {} ids for {frames} frames",
            z.len()
        )));
    }
    let device = model.device();
    let cond = InfillCond {
        context: acoustic_context.unsqueeze(0)?,
        z: ids_tensor(&[&z.ids], frames, device)?,
        frame_mask: Tensor::ones((1, frames), DType::F32, device)?,
    };
    Ok(model.evaluate(&x_t.unsqueeze(0)?, t, &cond)?.squeeze(0)?)
}

/// Generates `round(duration_s * sr / hop)` frames of speech for `text`
/// continuing `prompt_mel`. Noise comes from `seed`; the result is clamped
/// to the log floor.
pub fn synthesize(
    model: &InfillModel,
    prompt_mel: &MelSpectrogram,
    text: &str,
    duration_s: f64,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<MelSpectrogram> {
    let cfg = &model.config().mel;
    if prompt_mel.config() != cfg {
        return Err(Error::ConfigMismatch(
            "prompt mel settings differ from the model's".into(),
        ));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "duration {duration_s} is not positive"
        )));
    }
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("text is empty".into()));
    }
    let prompt = prompt_mel.n_frames();
    let target = to_frames(duration_s, cfg);
    let total = prompt + target;
    let n_mels = cfg.n_mels;
    let z = build_extended_sequence(text, total, prompt, model.vocab())?;
    let device = model.device();

    let mut context = prompt_mel.data().to_vec();
    context.resize(total * n_mels, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..total * n_mels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let cond = InfillCond {
        context: Tensor::from_vec(context, (1, total, n_mels), device)?,
        z: ids_tensor(&[&z.ids], total, device)?,
        frame_mask: Tensor::ones((1, total), DType::F32, device)?,
    };
    let x0 = Tensor::from_vec(noise, (1, total, n_mels), device)?;
    let x1 = euler_solve(
        model,
        &x0,
        sampler.nfe,
        &cond,
        sampler.cfg_strength,
        sampler.sway,
    )?;
    let generated: Vec<f32> = x1
        .squeeze(0)?
        .narrow(0, prompt, target)?
        .flatten_all()?
        .to_vec1()?;
    MelSpectrogram::from_unclamped(generated, target, cfg.clone())
}

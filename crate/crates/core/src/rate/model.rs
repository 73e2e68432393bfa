use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RateCategorySet;
use crate::audio::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::{self, apply_frame_mask, Conv1d, EncoderLayer, Linear, ParamStore};
use crate::units::Granularity;

/// Architecture and label settings of a rate predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub granularity: Granularity,
    /// Feature settings the model was trained on.
    pub mel: MelConfig,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    /// Width of the Gaussian soft labels, in classes.
    pub sigma: f64,
    /// Rescale soft labels to sum to one. Off by default.
    #[serde(default)]
    pub normalize_labels: bool,
}

impl PredictorConfig {
    /// 2 layers, 4 heads, 128 dims.
    pub fn desk(granularity: Granularity) -> Self {
        Self {
            granularity,
            mel: MelConfig::default(),
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            ff_mult: 4,
            conv_kernel: 3,
            dropout: 0.1,
            sigma: 1.0,
            normalize_labels: false,
        }
    }

    /// 6 layers, 8 heads, 512 dims.
    pub fn paper(granularity: Granularity) -> Self {
        Self {
            n_layers: 6,
            n_heads: 8,
            d_model: 512,
            ..Self::desk(granularity)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn categories(&self) -> RateCategorySet {
        RateCategorySet::for_granularity(self.granularity)
    }
}

/// Mel projection, two convolutions, a transformer encoder, attention
/// pooling and a linear classifier over rate categories.
pub struct RatePredictorModel {
    config: PredictorConfig,
    categories: RateCategorySet,
    params: ParamStore,
    mel_proj: Linear,
    conv1: Conv1d,
    conv2: Conv1d,
    layers: Vec<EncoderLayer>,
    final_norm: nn::LayerNorm,
    pool_score: Linear,
    classifier: Linear,
}

impl RatePredictorModel {
    pub fn new(config: PredictorConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let categories = config.categories();
        let d = config.d_model;
        let mut ps = ParamStore::new(seed, device);
        let mel_proj = Linear::new(&mut ps, "mel_proj", config.mel.n_mels, d)?;
        let conv1 = Conv1d::new(&mut ps, "conv1", d, d, config.conv_kernel)?;
        let conv2 = Conv1d::new(&mut ps, "conv2", d, d, config.conv_kernel)?;
        let layers = (0..config.n_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut ps,
                    &format!("encoder.{i}"),
                    d,
                    config.n_heads,
                    config.ff_mult,
                    config.dropout,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = nn::LayerNorm::new(&mut ps, "final_norm", d)?;
        let pool_score = Linear::new(&mut ps, "pool_score", d, 1)?;
        let classifier = Linear::new(&mut ps, "classifier", d, categories.n_classes)?;
        Ok(Self {
            config,
            categories,
            params: ps,
            mel_proj,
            conv1,
            conv2,
            layers,
            final_norm,
            pool_score,
            classifier,
        })
    }

    /// Same as [`new`](Self::new) but with an all-zero classifier, so every
    /// input maps to the uniform distribution.
    pub fn with_zero_classifier(
        config: PredictorConfig,
        seed: u64,
        device: &Device,
    ) -> Result<Self> {
        let model = Self::new(config, seed, device)?;
        for name in ["classifier.weight", "classifier.bias"] {
            let var = model.params.get(name).expect("classifier parameters exist");
            var.set(&var.as_tensor().zeros_like()?)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn categories(&self) -> &RateCategorySet {
        &self.categories
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Logits `[B, N]` for mels `[B, T, n_mels]` with frame mask `[B, T]`.
    /// Dropout is active only when `rng` is given.
    pub fn logits(
        &self,
        mels: &Tensor,
        mask: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (_, _, n_mels) = mels.dims3()?;
        if n_mels != self.config.mel.n_mels {
            return Err(Error::ConfigMismatch(format!(
                "model expects {} mel channels, got {n_mels}",
                self.config.mel.n_mels
            )));
        }
        let h = self.mel_proj.forward(mels)?;
        let h = self.conv1.forward(&h, Some(mask))?.gelu()?;
        let h = self.conv2.forward(&h, Some(mask))?;
        let mut h = apply_frame_mask(&h, Some(mask))?;
        let bias = nn::key_padding_bias(mask)?;
        for layer in &self.layers {
            h = layer.forward(&h, Some(&bias), rng.as_deref_mut())?;
        }
        let h = self.final_norm.forward(&h)?;
        let pooled =
            masked_attention_pool(&h, &self.pool_score.forward(&h)?.squeeze(D::Minus1)?, mask)?;
        self.classifier.forward(&pooled)
    }

    /// Class probabilities for a batch of mels.
    pub fn forward_batch(&self, mels: &[&MelSpectrogram]) -> Result<Vec<Vec<f64>>> {
        let (x, mask) = batch_mels(mels, self.config.mel.n_mels, self.device())?;
        let logits = self.logits(&x, &mask, None)?;
        let probs = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, D::Minus1)?;
        Ok(probs.to_vec2()?)
    }

    /// Class probabilities for one mel (inference mode).
    pub fn forward(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[mel])?.remove(0))
    }

    /// Centre of the most probable class; ties go to the lowest index.
    pub fn predict_rate(&self, mel: &MelSpectrogram) -> Result<f64> {
        let probs = self.forward(mel)?;
        self.categories.category_to_rate(first_argmax(&probs))
    }
}

/// Convenience wrapper mirroring [`RatePredictorModel::forward`].
pub fn forward(model: &RatePredictorModel, mel: &MelSpectrogram) -> Result<Vec<f64>> {
    model.forward(mel)
}

/// Centre of `argmax forward(mel)` on `categories`.
pub fn predict_rate(
    model: &RatePredictorModel,
    mel: &MelSpectrogram,
    categories: &RateCategorySet,
) -> Result<f64> {
    if categories.n_classes != model.categories().n_classes {
        return Err(Error::ConfigMismatch(format!(
            "model has {} classes but the category set has {}",
            model.categories().n_classes,
            categories.n_classes
        )));
    }
    let probs = model.forward(mel)?;
    categories.category_to_rate(first_argmax(&probs))
}

/// Index of the first maximum.
pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax-weighted average of the rows of `seq: [T, d]` under per-frame
/// `scores: [T]`.
pub fn attention_pool(seq: &Tensor, scores: &Tensor) -> Result<Tensor> {
    let (t, _) = seq.dims2()?;
    if t == 0 || scores.dims1()? != t {
        return Err(Error::Shape(format!(
            "attention_pool needs T >= 1 and one score per frame, got {:?} and {:?}",
            seq.dims(),
            scores.dims()
        )));
    }
    let weights = candle_nn::ops::softmax(scores, D::Minus1)?;
    Ok(weights.unsqueeze(0)?.matmul(seq)?.squeeze(0)?)
}

/// Batched pooling `[B, T, d]` -> `[B, d]`; masked frames get zero weight.
fn masked_attention_pool(seq: &Tensor, scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let bias = ((mask.ones_like()? - mask)? * -1e9)?;
    let weights = candle_nn::ops::softmax(&(scores + bias)?, D::Minus1)?;
    Ok(weights.unsqueeze(1)?.matmul(seq)?.squeeze(1)?)
}

/// Pads mels into `[B, T_max, n_mels]` plus a `[B, T_max]` frame mask.
pub(crate) fn batch_mels(
    mels: &[&MelSpectrogram],
    n_mels: usize,
    device: &Device,
) -> Result<(Tensor, Tensor)> {
    if mels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for m in mels {
        if m.n_mels() != n_mels {
            return Err(Error::ConfigMismatch(format!(
                "model expects {n_mels} mel channels, got {}",
                m.n_mels()
            )));
        }
    }
    let rows: Vec<(&[f32], usize)> = mels.iter().map(|m| (m.data(), m.n_frames())).collect();
    nn::pad_batch(&rows, n_mels, device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_config() -> PredictorConfig {
        PredictorConfig {
            mel: MelConfig {
                n_mels: 8,
                ..MelConfig::default()
            },
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            ..PredictorConfig::desk(Granularity::Syllable)
        }
    }

    fn random_mel(frames: usize, n_mels: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MelConfig {
            n_mels,
            ..MelConfig::default()
        };
        let data = (0..frames * n_mels)
            .map(|_| rng.random_range(-8.0f32..0.0))
            .collect();
        MelSpectrogram::new(data, frames, cfg).unwrap()
    }

    #[test]
    fn output_is_a_distribution() {
        let model = RatePredictorModel::new(small_config(), 3, &Device::Cpu).unwrap();
        let p = model.forward(&random_mel(20, 8, 1)).unwrap();
        assert_eq!(p.len(), 32);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_classifier_is_uniform_and_predicts_lowest_rate() {
        let model =
            RatePredictorModel::with_zero_classifier(small_config(), 3, &Device::Cpu).unwrap();
        let mel = random_mel(15, 8, 2);
        let p = model.forward(&mel).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 32.0).abs() < 1e-12));
        assert_eq!(model.predict_rate(&mel).unwrap(), 0.25);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let model = RatePredictorModel::new(small_config(), 3, &Device::Cpu).unwrap();
        assert!(matches!(
            model.forward(&random_mel(5, 9, 0)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn pooling_edge_cases() {
        let dev = Device::Cpu;
        let frame = Tensor::new(&[[1.5f32, -2.0, 0.25]], &dev).unwrap();
        let out: Vec<f32> = attention_pool(&frame, &Tensor::new(&[7.0f32], &dev).unwrap())
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(out, vec![1.5, -2.0, 0.25]);
        let same = Tensor::new(&[[0.5f32, 1.0], [0.5, 1.0], [0.5, 1.0]], &dev).unwrap();
        let out: Vec<f32> =
            attention_pool(&same, &Tensor::new(&[0.1f32, 3.0, -2.0], &dev).unwrap())
                .unwrap()
                .to_vec1()
                .unwrap();
        assert!((out[0] - 0.5).abs() < 1e-6 && (out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn first_argmax_prefers_lowest_index() {
        assert_eq!(first_argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(first_argmax(&[0.25; 4]), 0);
    }
}

//! Small neural building blocks on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] and are initialised from a seeded
//! ChaCha stream, so two runs with the same seed start from bit-identical
//! weights. All layers work on `[batch, time, channels]` with an optional
//! `[batch, time]` frame mask (1 = real frame, 0 = padding).

mod checkpoint;
mod optim;
mod schedule;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use optim::AdamW;
pub use schedule::WarmupLinear;

/// Named trainable parameters in insertion order, with a seeded initialiser.
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &self.device)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, data, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, data, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites every parameter from `values`; names and shapes must match.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let src = values
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint {:?} vs model {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(var.dtype())?.to_device(var.device())?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform(+-1/sqrt(in)) weights and bias.
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[d_in, d_out], bound)?,
            bias: Some(ps.uniform(&format!("{name}.bias"), &[d_out], bound)?),
        })
    }

    pub fn zeros(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.constant(&format!("{name}.weight"), &[d_in, d_out], 0.0)?,
            bias: Some(ps.constant(&format!("{name}.bias"), &[d_out], 0.0)?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: ps.constant(&format!("{name}.beta"), &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

/// Multiplies `x: [B, T, C]` by a `[B, T]` frame mask.
pub fn apply_frame_mask(x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => Ok(x.broadcast_mul(&m.unsqueeze(D::Minus1)?)?),
        None => Ok(x.clone()),
    }
}

/// Stride-1, same-padded 1-D convolution over time, written as a linear map
/// over `kernel` shifted copies. Padding and masked frames read as zero.
#[derive(Debug, Clone)]
pub struct Conv1d {
    proj: Linear,
    kernel: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel must be odd, got {kernel}"
            )));
        }
        Ok(Self {
            proj: Linear::new(ps, name, d_in * kernel, d_out)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = apply_frame_mask(x, mask)?;
        let (_, t, _) = x.dims3()?;
        let half = self.kernel / 2;
        let padded = x.pad_with_zeros(1, half, half)?;
        let shifted: Vec<Tensor> = (0..self.kernel)
            .map(|k| padded.narrow(1, k, t))
            .collect::<candle_core::Result<_>>()?;
        let stacked = Tensor::cat(&shifted, D::Minus1)?;
        self.proj.forward(&stacked)
    }
}

/// Additive attention bias: 0 for real keys, a large negative for padding.
/// Shape `[B, 1, 1, T]`.
pub fn key_padding_bias(mask: &Tensor) -> Result<Tensor> {
    let bias = ((mask.ones_like()? - mask)? * -1e9)?;
    Ok(bias.unsqueeze(1)?.unsqueeze(1)?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    qkv: Linear,
    out: Linear,
    n_heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::new(ps, &format!("{name}.qkv"), d_model, 3 * d_model)?,
            out: Linear::new(ps, &format!("{name}.out"), d_model, d_model)?,
            n_heads,
            d_model,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let head = self.d_model / self.n_heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.n_heads, head))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?)? * (1.0 / (head as f64).sqrt()))?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .reshape((b, t, self.d_model))?;
        self.out.forward(&ctx)
    }
}

/// Seeded inverted dropout. A no-op when `p == 0` or outside training.
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let Some(rng) = rng else {
            return Ok(x.clone());
        };
        if self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let n = x.elem_count();
        let mask: Vec<f32> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    (1.0 / keep) as f32
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

/// Pre-norm transformer encoder block with a GELU feed-forward.
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    dropout: Dropout,
}

impl EncoderLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ff_mult: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), d_model)?,
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), d_model, n_heads)?,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), d_model)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), d_model, ff_mult * d_model)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), ff_mult * d_model, d_model)?,
            dropout: Dropout { p: dropout },
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        bias: Option<&Tensor>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?, bias)?;
        let x = (x + self.dropout.forward(&a, rng.as_deref_mut())?)?;
        let h = self
            .ff2
            .forward(&self.ff1.forward(&self.norm2.forward(&x)?)?.gelu()?)?;
        Ok((&x + self.dropout.forward(&h, rng)?)?)
    }
}

/// Fixed sinusoidal table `[t, dim]`.
pub fn sinusoidal_positions(t: usize, dim: usize, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f32; t * dim];
    for pos in 0..t {
        for i in 0..dim / 2 {
            let freq = (-(10_000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
            let angle = pos as f64 * freq;
            data[pos * dim + 2 * i] = angle.sin() as f32;
            data[pos * dim + 2 * i + 1] = angle.cos() as f32;
        }
    }
    Ok(Tensor::from_vec(data, (t, dim), device)?)
}

/// Sinusoidal embedding of scalar times `[B] -> [B, dim]`, scaled by 1000.
pub fn timestep_embedding(ts: &[f64], dim: usize, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = vec![0f32; ts.len() * dim];
    for (b, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let angle = 1000.0 * t * freq;
            data[b * dim + i] = angle.sin() as f32;
            data[b * dim + half + i] = angle.cos() as f32;
        }
    }
    Ok(Tensor::from_vec(data, (ts.len(), dim), device)?)
}

/// Pads variable-length `[T_i, C]` rows into `[B, T_max, C]` plus a `[B, T_max]` mask.
pub fn pad_batch(
    rows: &[(&[f32], usize)],
    channels: usize,
    device: &Device,
) -> Result<(Tensor, Tensor)> {
    let t_max = rows.iter().map(|(_, t)| *t).max().unwrap_or(0);
    let b = rows.len();
    let mut data = vec![0f32; b * t_max * channels];
    let mut mask = vec![0f32; b * t_max];
    for (i, (values, t)) in rows.iter().enumerate() {
        data[i * t_max * channels..i * t_max * channels + t * channels]
            .copy_from_slice(&values[..t * channels]);
        mask[i * t_max..i * t_max + t].fill(1.0);
    }
    Ok((
        Tensor::from_vec(data, (b, t_max, channels), device)?,
        Tensor::from_vec(mask, (b, t_max), device)?,
    ))
}

pub(crate) fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(5, &dev);
        let mut b = ParamStore::new(5, &dev);
        let la = Linear::new(&mut a, "l", 4, 3).unwrap();
        let lb = Linear::new(&mut b, "l", 4, 3).unwrap();
        let va: Vec<f32> = la.weight.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = lb.weight.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
        assert_eq!(a.num_parameters(), 15);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let dev = Device::Cpu;
        let mut ps = ParamStore::new(1, &dev);
        let conv = Conv1d::new(&mut ps, "c", 2, 1, 3).unwrap();
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4., 5., 6., 7., 8.], (1, 4, 2), &dev).unwrap();
        let y: Vec<f32> = conv
            .forward(&x, None)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let w: Vec<f32> = conv.proj.weight.flatten_all().unwrap().to_vec1().unwrap();
        let bias: Vec<f32> = conv.proj.bias.as_ref().unwrap().to_vec1().unwrap();
        let xs = [[1f32, 2.], [3., 4.], [5., 6.], [7., 8.]];
        for t in 0..4 {
            let mut acc = bias[0];
            for k in 0..3 {
                let src = t as isize + k as isize - 1;
                if (0..4).contains(&src) {
                    for c in 0..2 {
                        acc += w[k * 2 + c] * xs[src as usize][c];
                    }
                }
            }
            assert!((acc - y[t]).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let dev = Device::Cpu;
        let mut ps = ParamStore::new(0, &dev);
        let ln = LayerNorm::new(&mut ps, "n", 4).unwrap();
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 1, 4), &dev).unwrap();
        let y: Vec<f32> = ln
            .forward(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }
}

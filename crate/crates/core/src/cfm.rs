//! Conditional flow matching with straight-line paths: interpolation,
//! regression target, masked loss, the sway time warp, classifier-free
//! guidance and an Euler sampler.

use candle_core::{DType, Tensor};
use rand::Rng;

use crate::error::{Error, Result};

/// Flow time in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FlowStep(f64);

impl FlowStep {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("flow step {t} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Noise sample `x0` and data sample `x1` of the same shape.
#[derive(Debug, Clone)]
pub struct LatentPair {
    pub x0: Tensor,
    pub x1: Tensor,
}

impl LatentPair {
    pub fn new(x0: Tensor, x1: Tensor) -> Result<Self> {
        same_shape(&x0, &x1)?;
        Ok(Self { x0, x1 })
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// A time-dependent vector field. `evaluate_unconditional` is the branch
/// used for guidance; by default it is the conditional branch itself.
pub trait VelocityModel {
    type Cond;

    fn evaluate(&self, x_t: &Tensor, t: FlowStep, cond: &Self::Cond) -> Result<Tensor>;

    fn evaluate_unconditional(
        &self,
        x_t: &Tensor,
        t: FlowStep,
        cond: &Self::Cond,
    ) -> Result<Tensor> {
        self.evaluate(x_t, t, cond)
    }
}

/// `(1 - t) x0 + t x1`.
pub fn ot_interpolate(pair: &LatentPair, t: FlowStep) -> Result<Tensor> {
    same_shape(&pair.x0, &pair.x1)?;
    let t = t.value();
    Ok((pair.x0.affine(1.0 - t, 0.0)? + pair.x1.affine(t, 0.0)?)?)
}

/// `x1 - x0`.
pub fn velocity_target(pair: &LatentPair) -> Result<Tensor> {
    same_shape(&pair.x0, &pair.x1)?;
    Ok((&pair.x1 - &pair.x0)?)
}

/// Interpolation with one flow time per leading-axis item.
pub fn ot_interpolate_batch(pair: &LatentPair, ts: &[f64]) -> Result<Tensor> {
    same_shape(&pair.x0, &pair.x1)?;
    let b = pair.x0.dim(0)?;
    if ts.len() != b {
        return Err(Error::Shape(format!(
            "{} flow steps for a batch of {b}",
            ts.len()
        )));
    }
    let mut shape = vec![1; pair.x0.rank()];
    shape[0] = b;
    let t = Tensor::from_vec(ts.to_vec(), shape, pair.x0.device())?.to_dtype(pair.x0.dtype())?;
    let one_minus = (t.ones_like()? - &t)?;
    Ok((pair.x0.broadcast_mul(&one_minus)? + pair.x1.broadcast_mul(&t)?)?)
}

/// Mean of `(pred - target)^2` over the entries whose frame is selected.
///
/// `mask` holds one 0/1 value per frame: it has the shape of `pred` minus
/// the last (channel) axis. Without a mask every entry counts.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    same_shape(pred, target)?;
    let sq = (pred - target)?.sqr()?;
    let Some(mask) = mask else {
        return Ok(sq.mean_all()?);
    };
    let expected = &pred.dims()[..pred.rank() - 1];
    if mask.dims() != expected {
        return Err(Error::Shape(format!(
            "mask {:?} does not match frames {:?}",
            mask.dims(),
            expected
        )));
    }
    let selected = mask.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if selected <= 0.0 {
        return Err(Error::InvalidMask);
    }
    let channels = *pred.dims().last().expect("rank checked above") as f64;
    let mask = mask.to_dtype(pred.dtype())?.unsqueeze(mask.rank())?;
    Ok((sq.broadcast_mul(&mask)?.sum_all()? / (selected * channels))?)
}

/// Flow-matching loss of `model` at time `t`, optionally restricted to
/// masked frames.
pub fn cfm_loss<M: VelocityModel>(
    model: &M,
    pair: &LatentPair,
    t: FlowStep,
    cond: &M::Cond,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let x_t = ot_interpolate(pair, t)?;
    let pred = model.evaluate(&x_t, t, cond)?;
    masked_mse(&pred, &velocity_target(pair)?, mask)
}

/// Uniform draw on `[0, 1)`.
pub fn sample_flow_step<R: Rng + ?Sized>(rng: &mut R) -> FlowStep {
    FlowStep(rng.random::<f64>())
}

/// `t + s (cos(pi t / 2) - 1 + t)`; negative `s` packs steps towards `t = 0`.
pub fn sway(t: FlowStep, s: f64) -> Result<FlowStep> {
    if !(s.abs() <= 1.0) {
        return Err(Error::InvalidCoefficient(s));
    }
    let t = t.value();
    // The bracket vanishes at both ends; evaluate it there exactly.
    let bracket = if t == 0.0 || t == 1.0 {
        0.0
    } else {
        (std::f64::consts::FRAC_PI_2 * t).cos() - 1.0 + t
    };
    let warped = t + s * bracket;
    Ok(FlowStep(warped.clamp(0.0, 1.0)))
}

/// `v_uncond + w (v_cond - v_uncond)`, returning a branch untouched when
/// `w` is exactly 0 or 1.
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, strength: f64) -> Result<Tensor> {
    same_shape(v_cond, v_uncond)?;
    if strength == 1.0 {
        return Ok(v_cond.clone());
    }
    if strength == 0.0 {
        return Ok(v_uncond.clone());
    }
    Ok((v_uncond + (v_cond - v_uncond)?.affine(strength, 0.0)?)?)
}

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub nfe: usize,
    pub cfg_strength: f64,
    pub sway: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            nfe: 32,
            cfg_strength: 2.0,
            sway: -1.0,
        }
    }
}

/// The `nfe + 1` solver times `sway(k / nfe)`.
pub fn time_grid(nfe: usize, sway_coeff: f64) -> Result<Vec<f64>> {
    if nfe == 0 {
        return Err(Error::InvalidInput("nfe must be at least 1".into()));
    }
    (0..=nfe)
        .map(|k| Ok(sway(FlowStep(k as f64 / nfe as f64), sway_coeff)?.value()))
        .collect()
}

/// Explicit Euler integration from `x0` at `t = 0` to `t = 1` over the
/// sway-warped grid, with guidance at every step.
pub fn euler_solve<M: VelocityModel>(
    model: &M,
    x0: &Tensor,
    nfe: usize,
    cond: &M::Cond,
    cfg_strength: f64,
    sway_coeff: f64,
) -> Result<Tensor> {
    let grid = time_grid(nfe, sway_coeff)?;
    let mut x = x0.clone();
    for (k, w) in grid.windows(2).enumerate() {
        let t = FlowStep(w[0]);
        let v = if cfg_strength == 1.0 {
            model.evaluate(&x, t, cond)?
        } else if cfg_strength == 0.0 {
            model.evaluate_unconditional(&x, t, cond)?
        } else {
            let v_c = model.evaluate(&x, t, cond)?;
            let v_u = model.evaluate_unconditional(&x, t, cond)?;
            cfg_combine(&v_c, &v_u, cfg_strength)?
        };
        same_shape(&v, &x)?;
        x = (x + v.affine(w[1] - w[0], 0.0)?)?;
        let finite = x
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged(k + 1));
        }
    }
    Ok(x)
}

/// [`euler_solve`] with a [`SamplerConfig`].
pub fn sample<M: VelocityModel>(
    model: &M,
    x0: &Tensor,
    cond: &M::Cond,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    euler_solve(model, x0, cfg.nfe, cond, cfg.cfg_strength, cfg.sway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    struct Zero;
    impl VelocityModel for Zero {
        type Cond = ();
        fn evaluate(&self, x_t: &Tensor, _: FlowStep, _: &()) -> Result<Tensor> {
            Ok(x_t.zeros_like()?)
        }
    }

    struct Exploding;
    impl VelocityModel for Exploding {
        type Cond = ();
        fn evaluate(&self, x_t: &Tensor, _: FlowStep, _: &()) -> Result<Tensor> {
            Ok(x_t.affine(0.0, f64::INFINITY)?)
        }
    }

    #[test]
    fn sway_endpoints_and_identity() {
        assert_eq!(sway(FlowStep(0.0), -1.0).unwrap().value(), 0.0);
        assert_eq!(sway(FlowStep(1.0), -1.0).unwrap().value(), 1.0);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert_eq!(sway(FlowStep(t), 0.0).unwrap().value(), t);
        }
        assert!(matches!(
            sway(FlowStep(0.3), -1.5),
            Err(Error::InvalidCoefficient(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_its_step() {
        let x0 = Tensor::zeros(4, DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(
            euler_solve(&Exploding, &x0, 4, &(), 1.0, 0.0),
            Err(Error::Diverged(1))
        ));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let dev = Device::Cpu;
        let x = Tensor::ones((1, 3, 2), DType::F32, &dev).unwrap();
        let pair = LatentPair::new(x.zeros_like().unwrap(), x).unwrap();
        let mask = Tensor::zeros((1, 3), DType::F32, &dev).unwrap();
        assert!(matches!(
            cfm_loss(&Zero, &pair, FlowStep(0.5), &(), Some(&mask)),
            Err(Error::InvalidMask)
        ));
    }

    #[test]
    fn shapes_are_checked() {
        let dev = Device::Cpu;
        let a = Tensor::ones(3, DType::F32, &dev).unwrap();
        let b = Tensor::ones(4, DType::F32, &dev).unwrap();
        assert!(matches!(
            LatentPair::new(a.clone(), b.clone()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(cfg_combine(&a, &b, 2.0), Err(Error::Shape(_))));
    }
}

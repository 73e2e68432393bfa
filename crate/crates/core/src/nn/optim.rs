use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};

use super::ParamStore;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter
/// name so they can ride along in a checkpoint.
pub struct AdamW {
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
}

impl AdamW {
    pub fn new(ps: &ParamStore, weight_decay: f64) -> Result<Self> {
        let params: Vec<(String, Var)> = ps
            .named()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        let m = params
            .iter()
            .map(|(_, v)| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            params,
            m,
            v,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
            let p = var.as_tensor().detach();
            let next = ((&p * (1.0 - lr * self.weight_decay))? - (update * lr)?)?;
            var.set(&next)?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
        }
        Ok(())
    }

    /// Moment buffers as `adam.m.<name>` / `adam.v.<name>` plus the step.
    pub fn state(&self) -> (usize, BTreeMap<String, Tensor>) {
        let mut out = BTreeMap::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.insert(format!("adam.m.{name}"), self.m[i].clone());
            out.insert(format!("adam.v.{name}"), self.v[i].clone());
        }
        (self.step, out)
    }

    pub fn load_state(&mut self, step: usize, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (i, (name, var)) in self.params.iter().enumerate() {
            for (prefix, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("adam.{prefix}.{name}");
                let t = tensors.get(&key).ok_or_else(|| {
                    Error::Config(format!("checkpoint lacks optimizer state {key}"))
                })?;
                if t.dims() != var.dims() {
                    return Err(Error::Shape(format!(
                        "optimizer state {key} has shape {:?}",
                        t.dims()
                    )));
                }
                *slot = t.to_dtype(var.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let ps_dev = Device::Cpu;
        let mut ps = ParamStore::new(0, &ps_dev);
        let w = ps.constant("w", &[2], 1.0).unwrap();
        let mut opt = AdamW::new(&ps, 0.0).unwrap();
        let scale = Tensor::new(&[3f32, -2.0], &ps_dev).unwrap();
        let loss = (&w * &scale).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), 0.1).unwrap();
        let after: Vec<f32> = ps.get("w").unwrap().as_tensor().to_vec1().unwrap();
        assert!((after[0] - 0.9).abs() < 1e-6);
        assert!((after[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let dev = Device::Cpu;
        let mut ps = ParamStore::new(0, &dev);
        ps.constant("w", &[3], 5.0).unwrap();
        let mut opt = AdamW::new(&ps, 0.0).unwrap();
        let target = Tensor::new(&[1f32, -1.0, 0.5], &dev).unwrap();
        for _ in 0..500 {
            let w = ps.get("w").unwrap().as_tensor().clone();
            let loss = (w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.05).unwrap();
        }
        let w: Vec<f32> = ps.get("w").unwrap().as_tensor().to_vec1().unwrap();
        assert!(
            (w[0] - 1.0).abs() < 1e-2 && (w[1] + 1.0).abs() < 1e-2 && (w[2] - 0.5).abs() < 1e-2
        );
    }
}

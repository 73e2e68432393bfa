//! Gaussian soft labels and the Gaussian cross-entropy loss.
//!
//! Soft labels are the unnormalised kernel `exp(-(c - c_gt)^2 / (2 sigma^2))`,
//! so the loss scale depends on `sigma`. The batch loss averages over batch
//! items. Probabilities are clamped at [`PROB_EPSILON`] before the log.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};

pub const PROB_EPSILON: f64 = 1e-12;

/// Gaussian kernel centred on `c_gt`; `y[c_gt] == 1`.
pub fn soft_labels(c_gt: usize, n_classes: usize, sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..n_classes)
        .map(|c| {
            let d = c as f64 - c_gt as f64;
            (-(d * d) / denom).exp()
        })
        .collect()
}

/// Soft labels, optionally rescaled to sum to one.
pub fn soft_labels_with(c_gt: usize, n_classes: usize, sigma: f64, normalize: bool) -> Vec<f64> {
    let mut y = soft_labels(c_gt, n_classes, sigma);
    if normalize {
        let s: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= s);
    }
    y
}

fn check_batch(n_items: usize, targets: &[usize]) -> Result<()> {
    if n_items == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if n_items != targets.len() {
        return Err(Error::Shape(format!(
            "{n_items} predictions for {} targets",
            targets.len()
        )));
    }
    Ok(())
}

/// `-(1/B) sum_b sum_c y_soft[c] log(max(p[c], eps))`.
pub fn gce_loss(probs: &[Vec<f64>], targets: &[usize], sigma: f64) -> Result<f64> {
    check_batch(probs.len(), targets)?;
    let mut total = 0.0;
    for (p, &t) in probs.iter().zip(targets) {
        if t >= p.len() {
            return Err(Error::InvalidInput(format!(
                "target {t} outside {} classes",
                p.len()
            )));
        }
        let y = soft_labels(t, p.len(), sigma);
        total -= y
            .iter()
            .zip(p)
            .map(|(y, p)| y * p.max(PROB_EPSILON).ln())
            .sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn gce_loss_from_logits(logits: &[Vec<f64>], targets: &[usize], sigma: f64) -> Result<f64> {
    let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
    gce_loss(&probs, targets, sigma)
}

/// Closed-form gradient of the batch loss with respect to the logits:
/// `(1/B) (sum(y) * softmax(z) - y)`. Exact whenever no probability falls
/// below the clamp.
pub fn gce_logit_gradient(
    logits: &[Vec<f64>],
    targets: &[usize],
    sigma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_batch(logits.len(), targets)?;
    let scale = 1.0 / logits.len() as f64;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(z, &t)| {
            let p = softmax(z);
            let y = soft_labels(t, z.len(), sigma);
            let mass: f64 = y.iter().sum();
            p.iter()
                .zip(&y)
                .map(|(p, y)| scale * (mass * p - y))
                .collect()
        })
        .collect())
}

/// Differentiable batch loss from logits `[B, N]` and soft targets `[B, N]`.
pub fn gce_loss_tensor(logits: &Tensor, soft_targets: &Tensor) -> Result<Tensor> {
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let log_p = log_p.maximum(PROB_EPSILON.ln())?;
    let per_item = (soft_targets * log_p)?.sum(D::Minus1)?.neg()?;
    Ok(per_item.mean_all()?)
}

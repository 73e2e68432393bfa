use serde::{Deserialize, Serialize};

/// Linear warm-up to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupLinear {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupLinear {
    /// Learning rate for the 0-based optimizer `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let s = step as f64 + 1.0;
        if step < self.warmup_steps {
            return self.peak_lr * s / self.warmup_steps as f64;
        }
        let decay_span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let into_decay = (step - self.warmup_steps) as f64;
        (self.peak_lr * (1.0 - into_decay / decay_span)).max(0.0)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::Granularity;

/// Uniform speaking-rate grid `{delta, 2 delta, ..., max_rate}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCategorySet {
    pub granularity: Granularity,
    pub delta: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub n_classes: usize,
    pub centers: Vec<f64>,
}

/// Grid step in units per second.
pub const RATE_DELTA: f64 = 0.25;

impl RateCategorySet {
    /// Phonemes: 0.25..=18.0 (72 classes). Syllables and words: 0.25..=8.0 (32 classes).
    pub fn for_granularity(g: Granularity) -> Self {
        let n_classes = match g {
            Granularity::Phoneme => 72,
            Granularity::Syllable | Granularity::Word => 32,
        };
        let centers: Vec<f64> = (0..n_classes)
            .map(|k| RATE_DELTA * (k + 1) as f64)
            .collect();
        Self {
            granularity: g,
            delta: RATE_DELTA,
            min_rate: centers[0],
            max_rate: centers[n_classes - 1],
            n_classes,
            centers,
        }
    }

    pub fn center(&self, index: usize) -> f64 {
        self.centers[index]
    }

    /// Nearest center; exact midpoints go to the lower center and rates
    /// beyond either end clamp to the edge class.
    pub fn rate_to_category(&self, rate: f64) -> Result<usize> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidRate(rate));
        }
        let last = self.n_classes - 1;
        let below = ((rate / self.delta).floor() as isize - 1).clamp(0, last as isize) as usize;
        let above = (below + 1).min(last);
        let d_below = (rate - self.centers[below]).abs();
        let d_above = (rate - self.centers[above]).abs();
        Ok(if d_above < d_below { above } else { below })
    }

    pub fn category_to_rate(&self, index: usize) -> Result<f64> {
        self.centers.get(index).copied().ok_or_else(|| {
            Error::InvalidInput(format!("class {index} outside 0..{}", self.n_classes))
        })
    }
}

pub fn build_category_set(g: Granularity) -> RateCategorySet {
    RateCategorySet::for_granularity(g)
}

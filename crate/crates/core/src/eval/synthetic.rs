//! Pulse-train mel clips with a known event rate, used to check that a rate
//! predictor can learn at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalItem;
use crate::align::Language;
use crate::audio::{round_half_up, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::rate::{RateCategorySet, RateExample};
use crate::units::{count_units, Granularity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticPattern {
    PulseTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRateSpec {
    /// Events per second.
    pub rate: f64,
    pub duration: f64,
    pub pattern: SyntheticPattern,
    /// Noise standard deviation as a fraction of the burst-to-background gap.
    pub noise_level: f64,
}

/// How clips are rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub granularity: Granularity,
    pub mel: MelConfig,
    pub burst_frames: usize,
    /// Log-mel level between bursts, relative to the floor.
    pub background_above_floor: f32,
    /// Log-mel level inside a burst.
    pub burst_level: f32,
}

impl SyntheticCorpusConfig {
    /// A frame rate coarse enough to keep desk-scale training cheap while
    /// leaving at least one quiet frame between bursts at the top of the grid:
    /// 25 frames/s for syllables and words, 75 frames/s for phonemes.
    pub fn desk(granularity: Granularity) -> Self {
        let hop = match granularity {
            Granularity::Phoneme => 320,
            Granularity::Syllable | Granularity::Word => 960,
        };
        Self {
            granularity,
            mel: MelConfig {
                hop,
                ..MelConfig::default()
            },
            burst_frames: 2,
            background_above_floor: 1.5,
            burst_level: -3.0,
        }
    }

    pub fn background(&self) -> f32 {
        self.mel.log_floor as f32 + self.background_above_floor
    }
}

impl SyntheticRateSpec {
    pub fn validate(
        &self,
        categories: &RateCategorySet,
        cfg: &SyntheticCorpusConfig,
    ) -> Result<()> {
        if !(self.rate >= categories.min_rate && self.rate <= categories.max_rate) {
            return Err(Error::InvalidRate(self.rate));
        }
        if !(3.0..=8.0).contains(&self.duration) {
            return Err(Error::InvalidInput(format!(
                "synthetic duration {} outside [3, 8] s",
                self.duration
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise level {}",
                self.noise_level
            )));
        }
        let spacing = cfg.mel.frames_per_second() / self.rate;
        if spacing < (cfg.burst_frames + 1) as f64 {
            return Err(Error::Config(format!(
                "rate {} leaves no gap between {}-frame bursts at {} frames/s",
                self.rate,
                cfg.burst_frames,
                cfg.mel.frames_per_second()
            )));
        }
        Ok(())
    }

    /// Number of bursts in the clip.
    pub fn n_events(&self) -> usize {
        round_half_up(self.rate * self.duration).max(1)
    }
}

/// Draws `n` specs with rates uniform in `rates` and an integer number of
/// events, so `events / duration` equals the rate exactly.
pub fn synthetic_rate_specs(
    n: usize,
    rates: (f64, f64),
    noise_level: f64,
    seed: u64,
) -> Vec<SyntheticRateSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rate = rng.random_range(rates.0..=rates.1);
            let target = rng.random_range(3.0..=8.0);
            let mut events = (rate * target).round().max(1.0);
            while events / rate > 8.0 {
                events -= 1.0;
            }
            while events / rate < 3.0 {
                events += 1.0;
            }
            SyntheticRateSpec {
                rate,
                duration: events / rate,
                pattern: SyntheticPattern::PulseTrain,
                noise_level,
            }
        })
        .collect()
}

/// Frames at which each burst starts: evenly spaced with a random phase.
pub fn burst_onsets(
    n_frames: usize,
    n_events: usize,
    burst_frames: usize,
    phase: f64,
) -> Vec<usize> {
    let spacing = n_frames as f64 / n_events as f64;
    let slack = (spacing - burst_frames as f64).max(0.0);
    let offset = phase.clamp(0.0, 1.0) * slack;
    (0..n_events)
        .map(|k| ((offset + k as f64 * spacing).floor() as usize).min(n_frames - burst_frames))
        .collect()
}

/// Renders one labelled clip per spec. Each clip draws from its own stream
/// of `seed`, so the corpus does not depend on how it is chunked.
pub fn generate_synthetic_rate_corpus(
    specs: &[SyntheticRateSpec],
    cfg: &SyntheticCorpusConfig,
    seed: u64,
) -> Result<Vec<RateExample>> {
    let categories = RateCategorySet::for_granularity(cfg.granularity);
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.validate(&categories, cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mel = render_pulse_train(spec, cfg, &mut rng)?;
            RateExample::new(mel, spec.rate, cfg.granularity)
        })
        .collect()
}

fn render_pulse_train(
    spec: &SyntheticRateSpec,
    cfg: &SyntheticCorpusConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MelSpectrogram> {
    let n_mels = cfg.mel.n_mels;
    let n_frames = cfg.mel.seconds_to_frames(spec.duration);
    let background = cfg.background();
    let gap = cfg.burst_level - background;
    let mut data = vec![background; n_frames * n_mels];
    let onsets = burst_onsets(n_frames, spec.n_events(), cfg.burst_frames, rng.random());
    // A gentle per-clip spectral tilt keeps bursts from being one fixed template.
    let tilt: f32 = rng.random_range(-1.0..1.0);
    for &start in &onsets {
        for t in start..start + cfg.burst_frames {
            for m in 0..n_mels {
                data[t * n_mels + m] = cfg.burst_level + tilt * (m as f32 / n_mels as f32 - 0.5);
            }
        }
    }
    if spec.noise_level > 0.0 {
        let noise = Normal::new(0.0, spec.noise_level * f64::from(gap))
            .map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut data {
            *v += noise.sample(rng) as f32;
        }
    }
    MelSpectrogram::from_unclamped(data, n_frames, cfg.mel.clone())
}

/// Turns labelled clips into duration-evaluation items. Each target text is
/// a run of one-syllable words whose length is drawn per item; the ground
/// truth is its unit count divided by the clip's rate. The prompt transcript
/// holds one word per burst.
pub fn synthetic_eval_items(examples: &[RateExample], seed: u64) -> Result<Vec<EvalItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let words: usize = rng.random_range(5..=30);
            let target_text = vec!["ba"; words].join(" ");
            let units = count_units(&target_text, Language::En, ex.granularity)?;
            let prompt_words = round_half_up(ex.true_rate * ex.mel.duration_seconds()).max(1);
            Ok(EvalItem {
                utt_id: format!("synthetic-{i:05}"),
                prompt_mel: ex.mel.clone(),
                prompt_text: Some(vec!["ba"; prompt_words].join(" ")),
                target_text,
                gt_duration: units as f64 / ex.true_rate,
                lang: Language::En,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_onsets(mel: &MelSpectrogram, threshold: f32) -> Vec<usize> {
        let loud: Vec<bool> = (0..mel.n_frames())
            .map(|t| {
                let f = mel.frame(t);
                f.iter().sum::<f32>() / f.len() as f32 > threshold
            })
            .collect();
        (0..loud.len())
            .filter(|&t| loud[t] && (t == 0 || !loud[t - 1]))
            .collect()
    }

    #[test]
    fn four_per_second_for_five_seconds_gives_twenty_even_bursts() {
        let cfg = SyntheticCorpusConfig::desk(Granularity::Syllable);
        let spec = SyntheticRateSpec {
            rate: 4.0,
            duration: 5.0,
            pattern: SyntheticPattern::PulseTrain,
            noise_level: 0.0,
        };
        let ex = &generate_synthetic_rate_corpus(&[spec], &cfg, 9).unwrap()[0];
        let mid = (cfg.burst_level + cfg.background()) / 2.0;
        let onsets = count_onsets(&ex.mel, mid);
        assert_eq!(onsets.len(), 20);
        let gaps: Vec<usize> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g.abs_diff(gaps[0]) <= 1), "{gaps:?}");
    }

    #[test]
    fn noiseless_generation_is_reproducible() {
        let cfg = SyntheticCorpusConfig::desk(Granularity::Syllable);
        let specs = synthetic_rate_specs(5, (1.0, 7.0), 0.0, 3);
        let a = generate_synthetic_rate_corpus(&specs, &cfg, 1).unwrap();
        let b = generate_synthetic_rate_corpus(&specs, &cfg, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mel, y.mel);
        }
    }

    #[test]
    fn burst_count_is_linear_in_rate() {
        let cfg = SyntheticCorpusConfig::desk(Granularity::Syllable);
        let mid = (cfg.burst_level + cfg.background()) / 2.0;
        for rate in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0] {
            let spec = SyntheticRateSpec {
                rate,
                duration: 6.0,
                pattern: SyntheticPattern::PulseTrain,
                noise_level: 0.0,
            };
            let ex = &generate_synthetic_rate_corpus(&[spec], &cfg, 0).unwrap()[0];
            assert_eq!(count_onsets(&ex.mel, mid).len(), (6.0 * rate) as usize);
        }
    }

    #[test]
    fn specs_have_whole_event_counts() {
        for s in synthetic_rate_specs(500, (1.0, 7.0), 0.1, 8) {
            assert!((3.0..=8.0).contains(&s.duration), "{s:?}");
            let events = s.rate * s.duration;
            assert!((events - events.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn phoneme_grid_top_rate_fits() {
        let cfg = SyntheticCorpusConfig::desk(Granularity::Phoneme);
        let cats = RateCategorySet::for_granularity(Granularity::Phoneme);
        let spec = SyntheticRateSpec {
            rate: 18.0,
            duration: 3.0,
            pattern: SyntheticPattern::PulseTrain,
            noise_level: 0.1,
        };
        spec.validate(&cats, &cfg).unwrap();
    }
}

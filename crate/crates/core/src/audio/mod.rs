//! Audio front end: log-mel analysis, an approximate inverse, and the
//! frame/second arithmetic every other module relies on.
//!
//! Framing is centre-padded (reflect), so a clip of `n` samples always has
//! `n / hop + 1` frames regardless of `n_fft`.

mod container;
mod griffin_lim;
mod wav;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_mel, read_mel_from, write_mel, write_mel_to, MEL_MAGIC};
pub use griffin_lim::{griffin_lim_invert, spectral_convergence, GriffinLim};
pub use wav::{read_wav, write_wav};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(
                "audio contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let energy: f64 = self.samples.iter().map(|&s| f64::from(s).powi(2)).sum();
        (energy / self.samples.len() as f64).sqrt()
    }
}

/// STFT and filterbank parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Natural-log floor applied to mel power.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 100,
            fmin: 0.0,
            fmax: 12_000.0,
            log_floor: 1e-5f64.ln(),
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop {} must be in 1..={}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin {} fmax {}",
                self.fmin, self.fmax
            )));
        }
        if !self.log_floor.is_finite() {
            return Err(Error::Config("log_floor must be finite".into()));
        }
        Ok(())
    }

    /// Frames produced for a clip of `n_samples` under centre-padded framing.
    pub fn frames_for_samples(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop as f64 / f64::from(self.sample_rate)
    }

    pub fn frames_per_second(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }

    /// `round_half_up(seconds * sr / hop)`, the single seconds-to-frames rule.
    pub fn seconds_to_frames(&self, seconds: f64) -> usize {
        round_half_up(seconds * f64::from(self.sample_rate) / self.hop as f64)
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Triangular HTK-scale filterbank, `n_mels x n_freqs`, unnormalised.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let edges = self.filter_edges_hz();
        let bin_hz = f64::from(self.sample_rate) / self.n_fft as f64;
        (0..self.n_mels)
            .map(|m| {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..self.n_freqs())
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (center - lo);
                        let down = (hi - f) / (hi - center);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// Centre frequency of every mel filter in Hz.
    pub fn filter_centers_hz(&self) -> Vec<f64> {
        let edges = self.filter_edges_hz();
        edges[1..=self.n_mels].to_vec()
    }

    fn filter_edges_hz(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.fmin), hz_to_mel(self.fmax));
        let n = self.n_mels + 1;
        (0..=n)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Rounds halves away from zero for non-negative inputs (2.5 -> 3).
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Frame-major log-mel matrix (`n_frames x n_mels`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    n_frames: usize,
    config: MelConfig,
}

impl MelSpectrogram {
    /// Wraps raw data, checking shape, finiteness, and the log floor.
    pub fn new(data: Vec<f32>, n_frames: usize, config: MelConfig) -> Result<Self> {
        if n_frames == 0 {
            return Err(Error::InvalidInput(
                "mel must have at least one frame".into(),
            ));
        }
        if data.len() != n_frames * config.n_mels {
            return Err(Error::Shape(format!(
                "{} values for {} frames x {} mels",
                data.len(),
                n_frames,
                config.n_mels
            )));
        }
        let floor = config.log_floor as f32;
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < floor) {
            return Err(Error::InvalidInput(format!(
                "mel entry {bad} is non-finite or below the floor {floor}"
            )));
        }
        Ok(Self {
            data,
            n_frames,
            config,
        })
    }

    /// Like [`MelSpectrogram::new`] but clamps values below the floor first.
    pub fn from_unclamped(mut data: Vec<f32>, n_frames: usize, config: MelConfig) -> Result<Self> {
        let floor = config.log_floor as f32;
        for v in &mut data {
            if *v < floor {
                *v = floor;
            }
        }
        Self::new(data, n_frames, config)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let m = self.config.n_mels;
        &self.data[t * m..(t + 1) * m]
    }

    /// Frames `[start, end)` as a new spectrogram.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames {
            return Err(Error::InvalidInput(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.n_frames
            )));
        }
        let m = self.config.n_mels;
        Ok(Self {
            data: self.data[start * m..end * m].to_vec(),
            n_frames: end - start,
            config: self.config.clone(),
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        mel_duration_seconds(self)
    }
}

/// `T * hop / sample_rate`.
pub fn mel_duration_seconds(mel: &MelSpectrogram) -> f64 {
    mel.n_frames as f64 * mel.config.frame_seconds()
}

/// Periodic Hann window of length `n`.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect-pads `samples` by `pad` on each side, folding repeatedly for short inputs.
pub(crate) fn reflect_pad(samples: &[f32], pad: usize) -> Vec<f64> {
    let n = samples.len() as isize;
    let fold = |mut i: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        i = i.rem_euclid(period);
        if i >= n {
            i = period - i;
        }
        i as usize
    };
    (-(pad as isize)..n + pad as isize)
        .map(|i| f64::from(samples[fold(i)]))
        .collect()
}

/// Power spectrogram (`T x n_freqs`) under centre-padded Hann framing.
pub(crate) fn power_spectrogram(samples: &[f32], cfg: &MelConfig) -> Vec<Vec<f64>> {
    let padded = reflect_pad(samples, cfg.n_fft / 2);
    let window = hann_window(cfg.n_fft);
    let n_frames = cfg.frames_for_samples(samples.len());
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    (0..n_frames)
        .map(|t| {
            let start = t * cfg.hop;
            for (i, slot) in input.iter_mut().enumerate() {
                *slot = padded[start + i] * window[i];
            }
            fft.process(&mut input, &mut spectrum)
                .expect("buffer sizes come from the planner");
            spectrum.iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Log-mel analysis of `clip` under `cfg`.
pub fn compute_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if clip.samples.is_empty() {
        return Err(Error::InvalidInput("audio clip is empty".into()));
    }
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::ConfigMismatch(format!(
            "clip sample rate {} != mel config sample rate {}",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let bank = cfg.filterbank();
    let floor_power = cfg.log_floor.exp();
    let floor = cfg.log_floor as f32;
    let power = power_spectrogram(&clip.samples, cfg);
    let mut data = Vec::with_capacity(power.len() * cfg.n_mels);
    for frame in &power {
        for filter in bank.iter() {
            let p: f64 = filter.iter().zip(frame).map(|(w, x)| w * x).sum();
            data.push(if p <= floor_power {
                floor
            } else {
                p.ln() as f32
            });
        }
    }
    MelSpectrogram::new(data, power.len(), cfg.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, seconds: f64, amp: f32, sr: u32) -> AudioClip {
        let n = (seconds * f64::from(sr)) as usize;
        let samples = (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(sr)).sin() as f32
            })
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn silence_maps_to_floor_with_expected_frame_count() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(vec![0.0; 24_000], 24_000).unwrap();
        let mel = compute_mel(&clip, &cfg).unwrap();
        assert_eq!(mel.n_frames(), 94);
        assert!(mel.data().iter().all(|&v| v == cfg.log_floor as f32));
    }

    #[test]
    fn tone_peaks_in_the_filter_nearest_its_frequency() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&tone(440.0, 0.5, 0.5, 24_000), &cfg).unwrap();
        // Oracle: the filter whose triangle gives 440 Hz the largest weight,
        // i.e. the one with the nearest centre on the mel axis.
        let target = hz_to_mel(440.0);
        let expected = cfg
            .filter_centers_hz()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (hz_to_mel(*a.1) - target)
                    .abs()
                    .total_cmp(&(hz_to_mel(*b.1) - target).abs())
            })
            .unwrap()
            .0;
        // Edge frames see reflected, partially windowed audio; skip them.
        for t in 2..mel.n_frames() - 2 {
            let frame = mel.frame(t);
            let argmax = (0..frame.len())
                .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
                .unwrap();
            assert_eq!(argmax, expected, "frame {t}");
        }
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f32> = (0..12_000).map(|_| rng.random_range(-0.25..0.25)).collect();
        let doubled: Vec<f32> = samples.iter().map(|s| 2.0 * s).collect();
        let a = compute_mel(&AudioClip::new(samples, 24_000).unwrap(), &cfg).unwrap();
        let b = compute_mel(&AudioClip::new(doubled, 24_000).unwrap(), &cfg).unwrap();
        let floor = cfg.log_floor as f32;
        let mut checked = 0;
        for (x, y) in a.data().iter().zip(b.data()) {
            if *x > floor + 1.0 {
                assert!((y - x - 4f32.ln()).abs() < 1e-4, "{x} -> {y}");
                checked += 1;
            }
        }
        assert!(checked > a.data().len() / 2);
    }

    #[test]
    fn duration_arithmetic() {
        let cfg = MelConfig::default();
        let mel = MelSpectrogram::new(vec![0.0; 94 * 100], 94, cfg.clone()).unwrap();
        assert!((mel_duration_seconds(&mel) - 94.0 * 256.0 / 24_000.0).abs() < 1e-15);
        let one = MelSpectrogram::new(vec![0.0; 100], 1, cfg).unwrap();
        assert_eq!(mel_duration_seconds(&one), 256.0 / 24_000.0);
    }

    #[test]
    fn duration_round_trips_within_one_hop() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1024..72_000);
            let clip = AudioClip::new(vec![0.0; n], 24_000).unwrap();
            let mel = compute_mel(&clip, &cfg).unwrap();
            let err = (mel_duration_seconds(&mel) - clip.duration_seconds()).abs();
            assert!(err <= cfg.frame_seconds() + 1e-12, "n={n} err={err}");
        }
    }

    #[test]
    fn errors() {
        let cfg = MelConfig::default();
        let empty = AudioClip::new(vec![], 24_000).unwrap();
        assert!(matches!(
            compute_mel(&empty, &cfg),
            Err(Error::InvalidInput(_))
        ));
        let other = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(
            compute_mel(&other, &cfg),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn frame_count_and_floor_hold_for_short_clips() {
        let cfg = MelConfig::default();
        for n in [1usize, 2, 7, 300, 511, 513, 1023] {
            let clip = AudioClip::new(vec![0.1; n], 24_000).unwrap();
            let mel = compute_mel(&clip, &cfg).unwrap();
            assert_eq!(mel.n_frames(), n / 256 + 1);
        }
    }

    #[test]
    fn round_half_up_rule() {
        assert_eq!(round_half_up(187.5), 188);
        assert_eq!(round_half_up(187.49), 187);
        assert_eq!(MelConfig::default().seconds_to_frames(2.0), 188);
    }
}

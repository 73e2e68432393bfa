//! Griffin-Lim phase recovery from a log-mel spectrogram. Audio output is a
//! listening aid only; nothing downstream evaluates it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use super::{hann_window, power_spectrogram, AudioClip, MelConfig, MelSpectrogram};

/// Griffin-Lim settings. The initial phase is drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GriffinLim {
    pub iters: usize,
    pub seed: u64,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self { iters: 32, seed: 0 }
    }
}

/// Inverts `mel` with the default phase seed.
pub fn griffin_lim_invert(mel: &MelSpectrogram, iters: usize) -> AudioClip {
    GriffinLim { iters, seed: 0 }.invert(mel)
}

impl GriffinLim {
    pub fn invert(&self, mel: &MelSpectrogram) -> AudioClip {
        let cfg = mel.config();
        let magnitude = linear_magnitude(mel);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut phase: Vec<Vec<Complex<f64>>> = magnitude
            .iter()
            .map(|row| {
                row.iter()
                    .map(|_| Complex::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
                    .collect()
            })
            .collect();
        let mut signal = istft(&magnitude, &phase, cfg);
        for _ in 0..self.iters.max(1) {
            let spectrum = stft(&signal, cfg);
            for (row, spec_row) in phase.iter_mut().zip(&spectrum) {
                for (p, s) in row.iter_mut().zip(spec_row) {
                    let norm = s.norm();
                    *p = if norm > 1e-12 {
                        s / norm
                    } else {
                        Complex::new(1.0, 0.0)
                    };
                }
            }
            signal = istft(&magnitude, &phase, cfg);
        }
        AudioClip {
            samples: signal.into_iter().map(|s| s as f32).collect(),
            sample_rate: cfg.sample_rate,
        }
    }
}

/// `|| target - |STFT(clip)| || / || target ||` against the magnitudes implied by `mel`.
pub fn spectral_convergence(mel: &MelSpectrogram, clip: &AudioClip) -> f64 {
    let target = linear_magnitude(mel);
    let actual = power_spectrogram(&clip.samples, mel.config());
    let (mut num, mut den) = (0.0, 0.0);
    for (t_row, a_row) in target.iter().zip(&actual) {
        for (t, a) in t_row.iter().zip(a_row) {
            num += (t - a.sqrt()).powi(2);
            den += t * t;
        }
    }
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

/// Spreads mel power back over FFT bins (filter-weighted average) and takes
/// the square root. Power at the floor maps to exact zero.
fn linear_magnitude(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let cfg = mel.config();
    let bank = cfg.filterbank();
    let floor_power = cfg.log_floor.exp();
    let col_sums: Vec<f64> = (0..cfg.n_freqs())
        .map(|k| bank.iter().map(|f| f[k]).sum())
        .collect();
    (0..mel.n_frames())
        .map(|t| {
            let excess: Vec<f64> = mel
                .frame(t)
                .iter()
                .map(|&v| (f64::from(v).exp() - floor_power).max(0.0))
                .collect();
            (0..cfg.n_freqs())
                .map(|k| {
                    if col_sums[k] <= 1e-12 {
                        return 0.0;
                    }
                    let p: f64 = bank.iter().zip(&excess).map(|(f, e)| f[k] * e).sum();
                    (p / col_sums[k]).sqrt()
                })
                .collect()
        })
        .collect()
}

fn stft(signal: &[f64], cfg: &MelConfig) -> Vec<Vec<Complex<f64>>> {
    let samples: Vec<f32> = signal.iter().map(|&s| s as f32).collect();
    let padded = super::reflect_pad(&samples, cfg.n_fft / 2);
    let window = hann_window(cfg.n_fft);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut input = fft.make_input_vec();
    (0..cfg.frames_for_samples(signal.len()))
        .map(|t| {
            let mut out = fft.make_output_vec();
            for (i, slot) in input.iter_mut().enumerate() {
                *slot = padded[t * cfg.hop + i] * window[i];
            }
            fft.process(&mut input, &mut out)
                .expect("buffer sizes come from the planner");
            out
        })
        .collect()
}

/// Windowed overlap-add inverse; output has `(T - 1) * hop` samples.
fn istft(magnitude: &[Vec<f64>], phase: &[Vec<Complex<f64>>], cfg: &MelConfig) -> Vec<f64> {
    let n_frames = magnitude.len();
    let n_fft = cfg.n_fft;
    let window = hann_window(n_fft);
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let total = (n_frames - 1) * cfg.hop + n_fft;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    for t in 0..n_frames {
        for (k, slot) in spectrum.iter_mut().enumerate() {
            *slot = phase[t][k] * magnitude[t][k];
        }
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        ifft.process(&mut spectrum, &mut frame)
            .expect("imaginary parts of DC and Nyquist are zeroed");
        let start = t * cfg.hop;
        for i in 0..n_fft {
            out[start + i] += frame[i] / n_fft as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let pad = n_fft / 2;
    let len = (n_frames - 1) * cfg.hop;
    (pad..pad + len)
        .map(|i| {
            if norm[i] > 1e-8 {
                out[i] / norm[i]
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::compute_mel;

    fn tone_clip() -> AudioClip {
        let sr = 24_000u32;
        let samples = (0..12_000)
            .map(|i| {
                0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / f64::from(sr)).sin() as f32
            })
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn tone_survives_inversion() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&tone_clip(), &cfg).unwrap();
        let audio = griffin_lim_invert(&mel, 16);
        assert!(
            (audio.samples.len() as isize - (mel.n_frames() * cfg.hop) as isize).abs()
                <= cfg.hop as isize
        );
        // Peak of the averaged output power spectrum, located on the FFT grid.
        let power = power_spectrogram(&audio.samples, &cfg);
        let mut avg = vec![0.0; cfg.n_freqs()];
        for row in &power {
            for (a, p) in avg.iter_mut().zip(row) {
                *a += p;
            }
        }
        let peak_bin = (0..avg.len())
            .max_by(|&a, &b| avg[a].total_cmp(&avg[b]))
            .unwrap();
        let peak_hz = peak_bin as f64 * f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        let centers = cfg.filter_centers_hz();
        let nearest = |hz: f64| {
            (0..centers.len())
                .min_by(|&a, &b| (centers[a] - hz).abs().total_cmp(&(centers[b] - hz).abs()))
                .unwrap() as isize
        };
        assert!(
            (nearest(peak_hz) - nearest(440.0)).abs() <= 1,
            "peak at {peak_hz} Hz"
        );
    }

    #[test]
    fn more_iterations_never_hurt() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&tone_clip(), &cfg).unwrap();
        let e1 = spectral_convergence(&mel, &griffin_lim_invert(&mel, 1));
        let e32 = spectral_convergence(&mel, &griffin_lim_invert(&mel, 32));
        assert!(e32 <= e1, "{e32} > {e1}");
    }

    #[test]
    fn floor_mel_is_silent() {
        let cfg = MelConfig::default();
        let mel = MelSpectrogram::new(vec![cfg.log_floor as f32; 50 * 100], 50, cfg).unwrap();
        assert!(griffin_lim_invert(&mel, 4).rms() < 1e-3);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&tone_clip(), &cfg).unwrap();
        let gl = GriffinLim { iters: 3, seed: 11 };
        assert_eq!(gl.invert(&mel), gl.invert(&mel));
    }
}

//! A small synthetic speech-like corpus: each syllable is a short harmonic
//! tone, words are separated by brief pauses, and every utterance comes with
//! an exact word alignment. Used by tests, the acceptance suite and the
//! `synth-corpus` command.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{write_manifest, AlignedToken, AlignedUtterance, Language};
use crate::audio::{write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::units::english_syllables;

const WORDS: &[&str] = &[
    "ba", "go", "data", "lemon", "river", "paper", "banana", "tomato", "window", "open", "music",
    "silver", "garden", "yellow", "table", "pilot",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_utterances: usize,
    pub sample_rate: u32,
    pub min_words: usize,
    pub max_words: usize,
    /// Seconds per syllable at tempo 1.
    pub syllable_seconds: f64,
    pub pause_seconds: f64,
    /// Tempo factors are drawn uniformly from this range; larger is faster.
    pub tempo_range: (f64, f64),
    /// Probability of inserting a digit or symbol-only token after a word.
    pub junk_prob: f64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_utterances: 20,
            sample_rate: 24_000,
            min_words: 8,
            max_words: 12,
            syllable_seconds: 0.16,
            pause_seconds: 0.08,
            tempo_range: (0.8, 1.25),
            junk_prob: 0.1,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 || self.sample_rate == 0 {
            return Err(Error::Config(
                "toy corpus needs utterances and a sample rate".into(),
            ));
        }
        if self.min_words < 2 || self.min_words > self.max_words {
            return Err(Error::Config(format!(
                "word range {}..={} must start at 2 or more",
                self.min_words, self.max_words
            )));
        }
        let (lo, hi) = self.tempo_range;
        if !(lo > 0.0 && lo <= hi) || self.syllable_seconds <= 0.0 || self.pause_seconds < 0.0 {
            return Err(Error::Config(
                "toy timing parameters must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.junk_prob) {
            return Err(Error::Config(format!(
                "junk_prob {} outside [0, 1]",
                self.junk_prob
            )));
        }
        Ok(())
    }
}

/// One generated utterance with its audio.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub utt: AlignedUtterance,
    pub clip: AudioClip,
    pub tempo: f64,
}

fn push_tone(samples: &mut Vec<f32>, sr: f64, seconds: f64, f0: f64) {
    let n = (seconds * sr).round() as usize;
    for i in 0..n {
        let t = i as f64 / sr;
        let env = (PI * i as f64 / n as f64).sin().powi(2);
        let wave: f64 = (1..=4)
            .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
            .sum();
        samples.push((0.25 * env * wave) as f32);
    }
}

fn push_silence(samples: &mut Vec<f32>, sr: f64, seconds: f64) {
    samples.extend(std::iter::repeat_n(0.0, (seconds * sr).round() as usize));
}

/// Generates utterances deterministically from `seed`.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Result<Vec<ToyUtterance>> {
    cfg.validate()?;
    let sr = f64::from(cfg.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.n_utterances);
    for u in 0..cfg.n_utterances {
        let tempo = rng.random_range(cfg.tempo_range.0..=cfg.tempo_range.1);
        let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
        let mut samples = Vec::new();
        push_silence(&mut samples, sr, 0.1);
        let mut tokens = Vec::new();
        for w in 0..n_words {
            let word = WORDS[rng.random_range(0..WORDS.len())];
            let base = rng.random_range(140.0..260.0);
            for s in 0..english_syllables(word) {
                push_tone(
                    &mut samples,
                    sr,
                    cfg.syllable_seconds / tempo,
                    base * (1.0 + 0.12 * s as f64),
                );
            }
            tokens.push(AlignedToken {
                text: word.to_string(),
                end_time: samples.len() as f64 / sr,
            });
            if w + 1 < n_words && rng.random::<f64>() < cfg.junk_prob {
                let junk = if rng.random::<bool>() { "42" } else { "!!" };
                push_silence(&mut samples, sr, 0.5 * cfg.pause_seconds / tempo);
                tokens.push(AlignedToken {
                    text: junk.to_string(),
                    end_time: samples.len() as f64 / sr,
                });
            }
            push_silence(&mut samples, sr, cfg.pause_seconds / tempo);
        }
        push_silence(&mut samples, sr, 0.1);
        let utt_id = format!("toy{u:04}");
        let clip = AudioClip::new(samples, cfg.sample_rate)?;
        let utt = AlignedUtterance {
            audio_path: format!("wavs/{utt_id}.wav"),
            utt_id,
            language: Language::En,
            tokens,
            total_duration: clip.duration_seconds(),
        };
        utt.validate()?;
        out.push(ToyUtterance { utt, clip, tempo });
    }
    Ok(out)
}

/// Writes `wavs/<utt_id>.wav` and `manifest.jsonl` under `dir`.
pub fn write_toy_corpus(dir: &Path, corpus: &[ToyUtterance]) -> Result<()> {
    let wav_dir = dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    for item in corpus {
        write_wav(&item.clip, dir.join(&item.utt.audio_path))?;
    }
    let manifest = dir.join("manifest.jsonl");
    let text = write_manifest(corpus.iter().map(|c| &c.utt))?;
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_matches_audio() {
        let corpus = generate_toy_corpus(&ToyCorpusConfig::default(), 3).unwrap();
        assert_eq!(corpus.len(), 20);
        for item in &corpus {
            let last = item.utt.tokens.last().unwrap().end_time;
            assert!(last < item.utt.total_duration);
            assert!(item.utt.total_duration > 1.0);
        }
        let again = generate_toy_corpus(&ToyCorpusConfig::default(), 3).unwrap();
        assert_eq!(corpus[7].clip.samples, again[7].clip.samples);
    }

    #[test]
    fn rejects_single_word_utterances() {
        let cfg = ToyCorpusConfig {
            min_words: 1,
            ..ToyCorpusConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

//! Text-guided speech infilling: the frame-level character sequence, the
//! prompt/target mask, the velocity network, its trainer and the sampler.

mod model;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align::{AlignedUtterance, BoundarySplit};
use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};

pub use model::{infill_forward, synthesize, InfillCond, InfillConfig, InfillModel};
pub use train::{train_tts, TtsTrainOptions, TtsTrainer};

/// Id of the padding symbol that fills every frame without a character.
pub const FILLER: u32 = 0;
const BYTE_BASE: u32 = 1;
const CHAR_BASE: u32 = BYTE_BASE + 256;

/// Character vocabulary over a byte fallback: id 0 is [`FILLER`], ids
/// 1..=256 are raw UTF-8 bytes, and known characters follow.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocab {
    chars: BTreeMap<char, u32>,
}

impl Vocab {
    /// Assigns ids to every distinct character of `texts` in sorted order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        seen.sort_unstable();
        seen.dedup();
        let chars = seen
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, CHAR_BASE + i as u32))
            .collect();
        Self { chars }
    }

    pub fn size(&self) -> usize {
        CHAR_BASE as usize + self.chars.len()
    }

    /// Ids for `text`; unknown characters expand to their UTF-8 bytes.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(text.len());
        for c in text.chars() {
            match self.chars.get(&c) {
                Some(&id) => ids.push(id),
                None => {
                    let mut buf = [0u8; 4];
                    ids.extend(
                        c.encode_utf8(&mut buf)
                            .bytes()
                            .map(|b| BYTE_BASE + u32::from(b)),
                    );
                }
            }
        }
        ids
    }

    pub fn contains_id(&self, id: u32) -> bool {
        (id as usize) < self.size()
    }
}

/// One character id per mel frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedCharSeq {
    pub ids: Vec<u32>,
}

impl ExtendedCharSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Same length, all filler.
    pub fn blank(&self) -> Self {
        Self {
            ids: vec![FILLER; self.ids.len()],
        }
    }
}

/// Frames `[0, prompt_frames)` are filler; the encoded text starts at
/// `prompt_frames` and the rest of the target region is filler.
pub fn build_extended_sequence(
    target_text: &str,
    total_frames: usize,
    prompt_frames: usize,
    vocab: &Vocab,
) -> Result<ExtendedCharSeq> {
    if prompt_frames >= total_frames {
        return Err(Error::InvalidInput(format!(
            "prompt of {prompt_frames} frames leaves no target in {total_frames}"
        )));
    }
    if target_text.is_empty() {
        return Err(Error::InvalidInput("target text is empty".into()));
    }
    let encoded = vocab.encode(target_text);
    let available = total_frames - prompt_frames;
    if encoded.len() > available {
        return Err(Error::TextOverflow {
            needed: encoded.len(),
            available,
        });
    }
    let mut ids = vec![FILLER; total_frames];
    ids[prompt_frames..prompt_frames + encoded.len()].copy_from_slice(&encoded);
    Ok(ExtendedCharSeq { ids })
}

/// Frames to predict (`true`) versus frames given as context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub frames: Vec<bool>,
}

impl MaskSpec {
    /// Masks `[start, end)` out of `n_frames`.
    pub fn interval(n_frames: usize, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > n_frames {
            return Err(Error::InvalidInput(format!(
                "mask interval {start}..{end} invalid for {n_frames} frames"
            )));
        }
        Ok(Self {
            frames: (0..n_frames).map(|t| (start..end).contains(&t)).collect(),
        })
    }

    pub fn n_masked(&self) -> usize {
        self.frames.iter().filter(|&&m| m).count()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// First masked frame.
    pub fn start(&self) -> Option<usize> {
        self.frames.iter().position(|&m| m)
    }
}

/// A mel, its frame-level text and the region to regenerate.
#[derive(Debug, Clone)]
pub struct TTSTrainExample {
    pub utt_id: String,
    pub mel: MelSpectrogram,
    pub z: ExtendedCharSeq,
    pub mask: MaskSpec,
}

impl TTSTrainExample {
    pub fn validate(&self) -> Result<()> {
        let n = self.mel.n_frames();
        if self.z.len() != n || self.mask.len() != n {
            return Err(Error::Shape(format!(
                "{}: mel {n} frames, z {}, mask {}",
                self.utt_id,
                self.z.len(),
                self.mask.len()
            )));
        }
        let masked = self.mask.n_masked();
        if masked == 0 || masked == n {
            return Err(Error::InvalidMask);
        }
        if !self.prompt_is_transcript_free() {
            return Err(Error::Validation {
                utt_id: self.utt_id.clone(),
                message: "prompt region carries text".into(),
            });
        }
        Ok(())
    }

    /// Every unmasked frame has a filler id.
    pub fn prompt_is_transcript_free(&self) -> bool {
        self.mask
            .frames
            .iter()
            .zip(&self.z.ids)
            .all(|(&masked, &id)| masked || id == FILLER)
    }
}

/// Builds an infilling example from an utterance split at a word boundary.
/// Only the target-side text is encoded; the prompt region is all filler.
pub fn make_train_example(
    utt: &AlignedUtterance,
    split: &BoundarySplit,
    mel: &MelSpectrogram,
    vocab: &Vocab,
) -> Result<TTSTrainExample> {
    let cfg = mel.config();
    let n = mel.n_frames();
    let start = cfg.seconds_to_frames(split.boundary_time());
    let end = cfg.seconds_to_frames(split.target_interval.1).min(n);
    if start == 0 {
        return Err(Error::DegenerateSplit("prompt"));
    }
    if start >= end {
        return Err(Error::DegenerateSplit("target"));
    }
    let mut z = build_extended_sequence(&split.target_text, end, start, vocab)?;
    z.ids.resize(n, FILLER);
    let example = TTSTrainExample {
        utt_id: utt.utt_id.clone(),
        mel: mel.clone(),
        z,
        mask: MaskSpec::interval(n, start, end)?,
    };
    example.validate()?;
    Ok(example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{partition, AlignedToken, Language};
    use crate::audio::MelConfig;

    fn ab_vocab() -> Vocab {
        Vocab::from_texts(["ab"])
    }

    #[test]
    fn layout_rule() {
        let v = ab_vocab();
        let z = build_extended_sequence("ab", 10, 4, &v).unwrap();
        let (a, b) = (v.encode("a")[0], v.encode("b")[0]);
        let f = FILLER;
        assert_eq!(z.ids, vec![f, f, f, f, a, b, f, f, f, f]);
        let z = build_extended_sequence("abab", 4, 0, &v).unwrap();
        assert!(z.ids.iter().all(|&id| id != FILLER));
        assert!(matches!(
            build_extended_sequence("abababa", 9, 4, &v),
            Err(Error::TextOverflow {
                needed: 7,
                available: 5
            })
        ));
    }

    #[test]
    fn byte_fallback_covers_unknown_text() {
        let v = ab_vocab();
        let ids = v.encode("a好");
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&id| id != FILLER && v.contains_id(id)));
    }

    #[test]
    fn boundary_frame_rounds_half_up() {
        let utt = AlignedUtterance {
            utt_id: "u".into(),
            audio_path: "u.wav".into(),
            language: Language::En,
            tokens: vec![
                AlignedToken {
                    text: "hello".into(),
                    end_time: 1.2,
                },
                AlignedToken {
                    text: "there".into(),
                    end_time: 2.9,
                },
            ],
            total_duration: 3.0,
        };
        let cfg = MelConfig::default();
        let n = cfg.frames_for_samples(72_000);
        let mel = MelSpectrogram::new(vec![cfg.log_floor as f32; n * cfg.n_mels], n, cfg).unwrap();
        let split = partition(&utt, 0).unwrap();
        let vocab = Vocab::from_texts(["there"]);
        let ex = make_train_example(&utt, &split, &mel, &vocab).unwrap();
        assert_eq!(ex.mask.start(), Some(113));
        assert!(ex.prompt_is_transcript_free());
        assert!(ex.z.ids[..113].iter().all(|&id| id == FILLER));
        assert_eq!(ex.mask.n_masked() + (n - ex.mask.n_masked()), n);
    }
}

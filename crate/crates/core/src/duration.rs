//! Target duration from a predicted speaking rate, plus the length-ratio
//! baseline and frame conversion.

use serde::{Deserialize, Serialize};

use crate::align::{is_han, Language};
use crate::audio::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::rate::{RateCategorySet, RatePredictorModel};
use crate::units::{count_units, Granularity};

/// Default upper bound on an estimated duration, in seconds.
pub const DEFAULT_MAX_DURATION: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMethod {
    RatePhoneme,
    RateSyllable,
    RateWord,
    LengthRatio,
    GroundTruth,
}

impl DurationMethod {
    pub fn for_granularity(g: Granularity) -> Self {
        match g {
            Granularity::Phoneme => Self::RatePhoneme,
            Granularity::Syllable => Self::RateSyllable,
            Granularity::Word => Self::RateWord,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RatePhoneme => "rate_phoneme",
            Self::RateSyllable => "rate_syllable",
            Self::RateWord => "rate_word",
            Self::LengthRatio => "length_ratio",
            Self::GroundTruth => "ground_truth",
        }
    }
}

impl std::fmt::Display for DurationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEstimate {
    pub seconds: f64,
    pub frames: usize,
    pub method: DurationMethod,
    pub predicted_rate: Option<f64>,
    pub unit_count: Option<usize>,
}

/// `round_half_up(seconds * sr / hop)`, never less than one frame.
pub fn to_frames(seconds: f64, cfg: &MelConfig) -> usize {
    cfg.seconds_to_frames(seconds).max(1)
}

/// `units / rate`, rejected above `cap` seconds.
pub fn duration_from_rate(
    units: usize,
    rate: f64,
    granularity: Granularity,
    cfg: &MelConfig,
    cap: f64,
) -> Result<DurationEstimate> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidRate(rate));
    }
    if units == 0 {
        return Err(Error::InvalidInput("text has no linguistic units".into()));
    }
    let seconds = units as f64 / rate;
    if seconds > cap {
        return Err(Error::DurationOutOfRange { seconds, cap });
    }
    Ok(DurationEstimate {
        seconds,
        frames: to_frames(seconds, cfg),
        method: DurationMethod::for_granularity(granularity),
        predicted_rate: Some(rate),
        unit_count: Some(units),
    })
}

/// Unit count of `text` divided by the rate the model hears in the prompt.
pub fn estimate_duration(
    model: &RatePredictorModel,
    categories: &RateCategorySet,
    prompt_mel: &MelSpectrogram,
    text: &str,
    granularity: Granularity,
    lang: Language,
) -> Result<DurationEstimate> {
    estimate_duration_capped(
        model,
        categories,
        prompt_mel,
        text,
        granularity,
        lang,
        DEFAULT_MAX_DURATION,
    )
}

pub fn estimate_duration_capped(
    model: &RatePredictorModel,
    categories: &RateCategorySet,
    prompt_mel: &MelSpectrogram,
    text: &str,
    granularity: Granularity,
    lang: Language,
    cap: f64,
) -> Result<DurationEstimate> {
    if model.config().granularity != granularity || categories.granularity != granularity {
        return Err(Error::ConfigMismatch(format!(
            "model is {}, categories are {}, requested {granularity}",
            model.config().granularity,
            categories.granularity
        )));
    }
    if prompt_mel.config() != &model.config().mel {
        return Err(Error::ConfigMismatch(
            "prompt mel settings differ from the ones the predictor was trained on".into(),
        ));
    }
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("target text is empty".into()));
    }
    let units = count_units(text, lang, granularity)?;
    let rate = crate::rate::predict_rate(model, prompt_mel, categories)?;
    duration_from_rate(units, rate, granularity, prompt_mel.config(), cap)
}

/// `prompt_duration * target_len / ref_len`.
pub fn length_ratio_duration(
    prompt_duration: f64,
    ref_text_len: usize,
    target_text_len: usize,
    cfg: &MelConfig,
) -> Result<DurationEstimate> {
    if ref_text_len == 0 {
        return Err(Error::InvalidInput("reference text length is zero".into()));
    }
    if target_text_len == 0 {
        return Err(Error::InvalidInput("target text length is zero".into()));
    }
    if !(prompt_duration > 0.0 && prompt_duration.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "prompt duration {prompt_duration} is not positive"
        )));
    }
    let seconds = prompt_duration * target_text_len as f64 / ref_text_len as f64;
    Ok(DurationEstimate {
        seconds,
        frames: to_frames(seconds, cfg),
        method: DurationMethod::LengthRatio,
        predicted_rate: None,
        unit_count: None,
    })
}

/// A duration given from outside, e.g. the reference recording's length.
pub fn ground_truth_duration(seconds: f64, cfg: &MelConfig) -> Result<DurationEstimate> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "duration {seconds} is not positive"
        )));
    }
    Ok(DurationEstimate {
        seconds,
        frames: to_frames(seconds, cfg),
        method: DurationMethod::GroundTruth,
        predicted_rate: None,
        unit_count: None,
    })
}

/// Character length used by the length-ratio rule: Han characters for
/// Chinese, non-whitespace characters otherwise.
pub fn text_length(text: &str, lang: Language) -> usize {
    match lang {
        Language::Zh => text.chars().filter(|&c| is_han(c)).count(),
        _ => text.chars().filter(|c| !c.is_whitespace()).count(),
    }
}

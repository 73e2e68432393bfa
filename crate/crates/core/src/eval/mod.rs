//! Duration evaluation: MAE/MRE, a per-method report, synthetic corpora and
//! a hook for external quality metrics.

mod external;
mod synthetic;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::align::Language;
use crate::audio::MelSpectrogram;
use crate::duration::{estimate_duration_capped, length_ratio_duration, text_length};
use crate::error::{Error, Result};
use crate::rate::{RateCategorySet, RatePredictorModel};
use crate::units::{count_units, Granularity};

pub use external::{CommandMetric, ExternalMetric};
pub use synthetic::{
    burst_onsets, generate_synthetic_rate_corpus, synthetic_eval_items, synthetic_rate_specs,
    SyntheticCorpusConfig, SyntheticPattern, SyntheticRateSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEvalRecord {
    pub utt_id: String,
    pub predicted_seconds: f64,
    pub ground_truth_seconds: f64,
    pub method: String,
}

/// Mean absolute error in seconds.
pub fn mae(records: &[DurationEvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("MAE over zero records".into()));
    }
    let sum: f64 = records
        .iter()
        .map(|r| (r.predicted_seconds - r.ground_truth_seconds).abs())
        .sum();
    Ok(sum / records.len() as f64)
}

/// Mean of `|pred - gt| / gt`, in percent.
pub fn mre(records: &[DurationEvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("MRE over zero records".into()));
    }
    let mut sum = 0.0;
    for r in records {
        if !(r.ground_truth_seconds > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{}: ground-truth duration {} is not positive",
                r.utt_id, r.ground_truth_seconds
            )));
        }
        sum += (r.predicted_seconds - r.ground_truth_seconds).abs() / r.ground_truth_seconds;
    }
    Ok(sum / records.len() as f64 * 100.0)
}

/// One utterance to evaluate: the prompt audio, the text to be spoken and
/// how long the reference recording of that text lasts.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub utt_id: String,
    pub prompt_mel: MelSpectrogram,
    /// Prompt transcript; only the length-ratio baseline reads it.
    pub prompt_text: Option<String>,
    pub target_text: String,
    pub gt_duration: f64,
    pub lang: Language,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    /// A trained rate predictor at this granularity (M1, M2, M3).
    Predictor(Granularity),
    /// A perfect classifier: the grid centre nearest the reference rate.
    OracleRate(Granularity),
    LengthRatio,
    GroundTruth,
}

impl EvalMethod {
    pub fn key(self) -> String {
        match self {
            Self::Predictor(Granularity::Phoneme) => "m1".into(),
            Self::Predictor(Granularity::Syllable) => "m2".into(),
            Self::Predictor(Granularity::Word) => "m3".into(),
            Self::OracleRate(g) => format!("oracle_{g}"),
            Self::LengthRatio => "length_ratio".into(),
            Self::GroundTruth => "ground_truth".into(),
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Predictor(g) => format!("{} ({g}-level predictor)", self.key().to_uppercase()),
            Self::OracleRate(g) => format!("Oracle {g} rate"),
            Self::LengthRatio => "Length ratio".into(),
            Self::GroundTruth => "Ground truth".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "m1" => Self::Predictor(Granularity::Phoneme),
            "m2" => Self::Predictor(Granularity::Syllable),
            "m3" => Self::Predictor(Granularity::Word),
            "length_ratio" => Self::LengthRatio,
            "gt" | "ground_truth" => Self::GroundTruth,
            other => match other.strip_prefix("oracle_") {
                Some(g) => Self::OracleRate(g.parse()?),
                None => return Err(Error::Config(format!("unknown evaluation method `{s}`"))),
            },
        })
    }
}

/// Trained predictors available to an evaluation run.
#[derive(Default)]
pub struct RateModels<'a> {
    pub phoneme: Option<&'a RatePredictorModel>,
    pub syllable: Option<&'a RatePredictorModel>,
    pub word: Option<&'a RatePredictorModel>,
}

impl<'a> RateModels<'a> {
    pub fn get(&self, g: Granularity) -> Option<&'a RatePredictorModel> {
        match g {
            Granularity::Phoneme => self.phoneme,
            Granularity::Syllable => self.syllable,
            Granularity::Word => self.word,
        }
    }

    pub fn insert(&mut self, model: &'a RatePredictorModel) {
        match model.config().granularity {
            Granularity::Phoneme => self.phoneme = Some(model),
            Granularity::Syllable => self.syllable = Some(model),
            Granularity::Word => self.word = Some(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub label: String,
    pub mae_s: f64,
    pub mre_pct: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationReport {
    pub dataset: String,
    pub rows: Vec<ReportRow>,
    pub records: Vec<DurationEvalRecord>,
}

impl DurationReport {
    /// `{method: {mae_s, mre_pct, n}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.method.clone(),
                    serde_json::json!({"mae_s": r.mae_s, "mre_pct": r.mre_pct, "n": r.n}),
                )
            })
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Plain-text table: a dataset header, then one row per method.
    pub fn render_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let rule = "-".repeat(width + 26);
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{:<width$} | {:^21}", "", self.dataset);
        let _ = writeln!(
            out,
            "{:<width$} | {:>9} | {:>9}",
            "Method", "MAE (s)", "MRE (%)"
        );
        let _ = writeln!(out, "{rule}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$} | {:>9.3} | {:>9.3}",
                r.label, r.mae_s, r.mre_pct
            );
        }
        let _ = writeln!(out, "{rule}");
        out
    }
}

/// Predicts a duration for every item with every method and summarises each
/// method as one MAE/MRE row, in the order requested.
pub fn run_duration_eval(
    dataset: &str,
    corpus: &[EvalItem],
    methods: &[EvalMethod],
    models: &RateModels<'_>,
) -> Result<DurationReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("evaluation corpus is empty".into()));
    }
    for m in methods {
        if let EvalMethod::Predictor(g) = m {
            if models.get(*g).is_none() {
                return Err(Error::Config(format!(
                    "method {} needs a {g}-level rate predictor",
                    m.key()
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(methods.len());
    let mut all = Vec::new();
    for &method in methods {
        let records = corpus
            .iter()
            .map(|item| {
                Ok(DurationEvalRecord {
                    utt_id: item.utt_id.clone(),
                    predicted_seconds: predict(method, item, models)?,
                    ground_truth_seconds: item.gt_duration,
                    method: method.key(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ReportRow {
            method: method.key(),
            label: method.label(),
            mae_s: mae(&records)?,
            mre_pct: mre(&records)?,
            n: records.len(),
        });
        all.extend(records);
    }
    Ok(DurationReport {
        dataset: dataset.to_string(),
        rows,
        records: all,
    })
}

fn predict(method: EvalMethod, item: &EvalItem, models: &RateModels<'_>) -> Result<f64> {
    match method {
        EvalMethod::Predictor(g) => {
            let model = models
                .get(g)
                .ok_or_else(|| Error::Config(format!("no {g}-level rate predictor")))?;
            let categories = RateCategorySet::for_granularity(g);
            let estimate = estimate_duration_capped(
                model,
                &categories,
                &item.prompt_mel,
                &item.target_text,
                g,
                item.lang,
                f64::INFINITY,
            )?;
            Ok(estimate.seconds)
        }
        EvalMethod::OracleRate(g) => {
            let categories = RateCategorySet::for_granularity(g);
            let units = count_units(&item.target_text, item.lang, g)?;
            let true_rate = units as f64 / item.gt_duration;
            let rate = categories.center(categories.rate_to_category(true_rate)?);
            Ok(units as f64 / rate)
        }
        EvalMethod::LengthRatio => {
            let prompt_text = item.prompt_text.as_deref().ok_or_else(|| {
                Error::Config(format!(
                    "{}: length_ratio needs the prompt transcript",
                    item.utt_id
                ))
            })?;
            let cfg = item.prompt_mel.config();
            let prompt_seconds = item.prompt_mel.duration_seconds();
            let estimate = length_ratio_duration(
                prompt_seconds,
                text_length(prompt_text, item.lang),
                text_length(&item.target_text, item.lang),
                cfg,
            )?;
            Ok(estimate.seconds)
        }
        EvalMethod::GroundTruth => Ok(item.gt_duration),
    }
}

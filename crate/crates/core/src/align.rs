//! Forced-alignment ingestion: manifest parsing, anomalous-token removal,
//! and random word-boundary partitioning into a transcript-free prompt and a
//! supervised target.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Utterance language, which selects the script test and the text joiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Other,
}

impl Language {
    /// Separator used when joining word tokens back into text.
    pub fn joiner(self) -> &'static str {
        match self {
            Language::Zh => "",
            Language::En | Language::Other => " ",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            "other" => Ok(Language::Other),
            _ => Err(Error::InvalidInput(format!("unknown language {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedToken {
    pub text: String,
    /// Word end time in seconds.
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUtterance {
    pub utt_id: String,
    pub audio_path: String,
    pub language: Language,
    pub tokens: Vec<AlignedToken>,
    pub total_duration: f64,
}

/// One manifest line as written by the upstream aligner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub audio: String,
    pub lang: Language,
    pub dur: f64,
    pub words: Vec<(String, f64)>,
}

impl From<&AlignedUtterance> for ManifestRecord {
    fn from(u: &AlignedUtterance) -> Self {
        Self {
            utt_id: u.utt_id.clone(),
            audio: u.audio_path.clone(),
            lang: u.language,
            dur: u.total_duration,
            words: u
                .tokens
                .iter()
                .map(|t| (t.text.clone(), t.end_time))
                .collect(),
        }
    }
}

impl TryFrom<ManifestRecord> for AlignedUtterance {
    type Error = Error;

    fn try_from(r: ManifestRecord) -> Result<Self> {
        let utt = AlignedUtterance {
            utt_id: r.utt_id,
            audio_path: r.audio,
            language: r.lang,
            tokens: r
                .words
                .into_iter()
                .map(|(text, end_time)| AlignedToken { text, end_time })
                .collect(),
            total_duration: r.dur,
        };
        utt.validate()?;
        Ok(utt)
    }
}

impl AlignedUtterance {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Validation {
                utt_id: self.utt_id.clone(),
                message,
            })
        };
        if self.tokens.is_empty() {
            return fail("no tokens".into());
        }
        if !(self.total_duration.is_finite() && self.total_duration > 0.0) {
            return fail(format!("duration {} is not positive", self.total_duration));
        }
        let mut prev = 0.0;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.text.is_empty() {
                return fail(format!("token {i} has empty text"));
            }
            if !(tok.end_time.is_finite() && tok.end_time > 0.0) {
                return fail(format!(
                    "token {i} end time {} is not positive",
                    tok.end_time
                ));
            }
            if i > 0 && tok.end_time <= prev {
                return fail(format!(
                    "end times not strictly increasing at token {i} ({} after {prev})",
                    tok.end_time
                ));
            }
            prev = tok.end_time;
        }
        if prev > self.total_duration {
            return fail(format!(
                "last end time {prev} exceeds duration {}",
                self.total_duration
            ));
        }
        Ok(())
    }

    pub fn end_time(&self, index: usize) -> f64 {
        self.tokens[index].end_time
    }

    /// Full transcript, joined per language.
    pub fn text(&self) -> String {
        join_tokens(&self.tokens, self.language)
    }
}

fn join_tokens(tokens: &[AlignedToken], lang: Language) -> String {
    tokens
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(lang.joiner())
}

/// Result of a lenient manifest parse: good utterances plus the rejected
/// lines (1-based) and why.
#[derive(Debug, Default)]
pub struct ManifestParse {
    pub utterances: Vec<AlignedUtterance>,
    pub rejected: Vec<(usize, Error)>,
}

/// Parses every line, collecting failures instead of stopping at the first.
pub fn parse_manifest_lenient<R: Read>(reader: R) -> Result<ManifestParse> {
    let mut out = ManifestParse::default();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ManifestRecord>(&line)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(AlignedUtterance::try_from);
        match parsed {
            Ok(utt) => out.utterances.push(utt),
            Err(e) => out.rejected.push((line_no, e)),
        }
    }
    Ok(out)
}

/// Strict parse: the first bad line is an error.
pub fn parse_manifest_from<R: Read>(reader: R) -> Result<Vec<AlignedUtterance>> {
    let parsed = parse_manifest_lenient(reader)?;
    match parsed.rejected.into_iter().next() {
        Some((_, err)) => Err(err),
        None => Ok(parsed.utterances),
    }
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<AlignedUtterance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_from(file)
}

/// Serialises utterances in the manifest line format.
pub fn write_manifest<'a>(
    utterances: impl IntoIterator<Item = &'a AlignedUtterance>,
) -> Result<String> {
    let mut out = String::new();
    for utt in utterances {
        out.push_str(&serde_json::to_string(&ManifestRecord::from(utt))?);
        out.push('\n');
    }
    Ok(out)
}

fn in_script(c: char, lang: Language) -> bool {
    match lang {
        Language::En => c.is_ascii_alphabetic() || c == '\'' || c == '-',
        Language::Zh => is_han(c),
        Language::Other => c.is_alphabetic() || c == '\'' || c == '-',
    }
}

/// CJK Unified Ideographs, including extension A.
pub fn is_han(c: char) -> bool {
    matches!(c, '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}')
}

/// Strips surrounding punctuation; `None` when nothing alphanumeric is left.
fn normalize_token(text: &str) -> Option<&str> {
    let trimmed = text.trim_matches(|c: char| !c.is_alphanumeric());
    (!trimmed.is_empty()).then_some(trimmed)
}

fn keep_token(text: &str, lang: Language) -> Option<&str> {
    let core = normalize_token(text)?;
    if core.chars().any(char::is_numeric) {
        return None;
    }
    core.chars().all(|c| in_script(c, lang)).then_some(core)
}

/// Drops tokens with digits, symbol-only tokens, and tokens outside the
/// utterance's script. Survivors keep their end times, so dropped tokens can
/// never be chosen as boundaries.
pub fn sanitize_tokens(utt: &AlignedUtterance) -> Result<AlignedUtterance> {
    let tokens: Vec<AlignedToken> = utt
        .tokens
        .iter()
        .filter_map(|t| {
            keep_token(&t.text, utt.language).map(|text| AlignedToken {
                text: text.to_string(),
                end_time: t.end_time,
            })
        })
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyAfterSanitize(utt.utt_id.clone()));
    }
    Ok(AlignedUtterance {
        tokens,
        ..utt.clone()
    })
}

/// Minimum prompt and target lengths for boundary selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryLimits {
    pub min_prompt: f64,
    pub min_target: f64,
}

impl Default for BoundaryLimits {
    fn default() -> Self {
        Self {
            min_prompt: 1.0,
            min_target: 1.0,
        }
    }
}

/// Boundary indices that leave at least one target token and respect `limits`.
pub fn eligible_boundaries(utt: &AlignedUtterance, limits: BoundaryLimits) -> Vec<usize> {
    let last = utt.tokens.len().saturating_sub(1);
    (0..last)
        .filter(|&i| {
            let t = utt.end_time(i);
            t >= limits.min_prompt && utt.total_duration - t >= limits.min_target
        })
        .collect()
}

/// Picks a boundary uniformly among the eligible ones.
pub fn select_boundary<R: Rng + ?Sized>(
    utt: &AlignedUtterance,
    rng: &mut R,
    limits: BoundaryLimits,
) -> Result<usize> {
    let eligible = eligible_boundaries(utt, limits);
    if eligible.is_empty() {
        return Err(Error::NoEligibleBoundary(utt.utt_id.clone()));
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}

/// A prompt/target partition. Only the target side carries text.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySplit {
    /// `[0, t_b)` in seconds.
    pub prompt_interval: (f64, f64),
    /// `[t_b, total_duration)` in seconds.
    pub target_interval: (f64, f64),
    pub target_text: String,
    pub boundary_index: usize,
}

impl BoundarySplit {
    pub fn boundary_time(&self) -> f64 {
        self.prompt_interval.1
    }
}

/// Splits after token `boundary_index`; the prompt-side words are discarded.
pub fn partition(utt: &AlignedUtterance, boundary_index: usize) -> Result<BoundarySplit> {
    let n = utt.tokens.len();
    if boundary_index + 1 >= n {
        return Err(Error::InvalidBoundary {
            index: boundary_index,
            n_tokens: n,
        });
    }
    let t_b = utt.end_time(boundary_index);
    Ok(BoundarySplit {
        prompt_interval: (0.0, t_b),
        target_interval: (t_b, utt.total_duration),
        target_text: join_tokens(&utt.tokens[boundary_index + 1..], utt.language),
        boundary_index,
    })
}

//! Corpus preparation: sanitize an aligned manifest, compute mels, write
//! rate-training manifests, and turn prepared utterances into training
//! examples.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    parse_manifest_from, parse_manifest_lenient, partition, sanitize_tokens, select_boundary,
    write_manifest, AlignedUtterance, BoundaryLimits,
};
use crate::audio::{compute_mel, read_mel, read_wav, write_mel, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::eval::EvalItem;
use crate::infill::{make_train_example, TTSTrainExample, Vocab};
use crate::rate::RateExample;
use crate::units::{count_units, Granularity};

/// Counts reported by [`prepare_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub kept: usize,
    pub dropped_tokens: usize,
    pub dropped_utts: usize,
}

/// One line of a rate-training manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateManifestEntry {
    pub mel: String,
    pub rate: f64,
    pub granularity: Granularity,
}

pub const PREPARED_MANIFEST: &str = "manifest.jsonl";
pub const MEL_DIR: &str = "mels";

pub fn rate_manifest_name(g: Granularity) -> String {
    format!("rate_{g}.jsonl")
}

/// Reads `manifest`, drops unusable lines and tokens, computes a mel per
/// kept utterance and writes everything under `out_dir`:
/// `manifest.jsonl`, `mels/<utt_id>.mel` and one `rate_<granularity>.jsonl`
/// per granularity. Audio paths resolve against `audio_root`.
///
/// Rerunning on the same inputs rewrites identical files.
pub fn prepare_corpus(
    manifest: &Path,
    audio_root: &Path,
    out_dir: &Path,
    mel_cfg: &MelConfig,
) -> Result<PrepareStats> {
    mel_cfg.validate()?;
    let file = fs::File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let parsed = parse_manifest_lenient(file)?;
    let mut stats = PrepareStats {
        dropped_utts: parsed.rejected.len(),
        ..PrepareStats::default()
    };
    for (line, err) in &parsed.rejected {
        log::warn!("{}:{line}: {err}", manifest.display());
    }
    let mel_dir = out_dir.join(MEL_DIR);
    fs::create_dir_all(&mel_dir).map_err(|e| Error::io(&mel_dir, e))?;

    let mut kept = Vec::new();
    let mut rate_lines: Vec<String> = vec![String::new(); Granularity::ALL.len()];
    for utt in parsed.utterances {
        let clean = match sanitize_tokens(&utt) {
            Ok(clean) => clean,
            Err(err) => {
                log::warn!("{err}");
                stats.dropped_tokens += utt.tokens.len();
                stats.dropped_utts += 1;
                continue;
            }
        };
        let audio_path = audio_root.join(&utt.audio_path);
        let mel = match read_wav(&audio_path).and_then(|clip| compute_mel(&clip, mel_cfg)) {
            Ok(mel) => mel,
            Err(err) => {
                log::warn!("{}: {err}", utt.utt_id);
                stats.dropped_utts += 1;
                continue;
            }
        };
        stats.dropped_tokens += utt.tokens.len() - clean.tokens.len();
        let mel_rel = format!("{MEL_DIR}/{}.mel", clean.utt_id);
        write_mel(&mel, out_dir.join(&mel_rel))?;
        let text = clean.text();
        for (g, lines) in Granularity::ALL.iter().zip(rate_lines.iter_mut()) {
            let units = count_units(&text, clean.language, *g)?;
            let entry = RateManifestEntry {
                mel: mel_rel.clone(),
                rate: units as f64 / clean.total_duration,
                granularity: *g,
            };
            lines.push_str(&serde_json::to_string(&entry)?);
            lines.push('\n');
        }
        kept.push(clean);
    }
    stats.kept = kept.len();
    write_file(&out_dir.join(PREPARED_MANIFEST), &write_manifest(&kept)?)?;
    for (g, lines) in Granularity::ALL.iter().zip(&rate_lines) {
        write_file(&out_dir.join(rate_manifest_name(*g)), lines)?;
    }
    write_file(
        &out_dir.join("stats.json"),
        &serde_json::to_string_pretty(&stats)?,
    )?;
    Ok(stats)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// A prepared utterance and its mel.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub utt: AlignedUtterance,
    pub mel: MelSpectrogram,
}

/// Loads what [`prepare_corpus`] wrote.
pub fn load_prepared(dir: &Path, mel_cfg: &MelConfig) -> Result<Vec<PreparedUtterance>> {
    let manifest = dir.join(PREPARED_MANIFEST);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    parse_manifest_from(file)?
        .into_iter()
        .map(|utt| {
            let mel = read_mel(
                dir.join(MEL_DIR).join(format!("{}.mel", utt.utt_id)),
                mel_cfg,
            )?;
            Ok(PreparedUtterance { utt, mel })
        })
        .collect()
}

/// Loads a `rate_<granularity>.jsonl` manifest; mel paths resolve against
/// the manifest's directory.
pub fn load_rate_manifest(path: &Path, mel_cfg: &MelConfig) -> Result<Vec<RateExample>> {
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RateManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mel = read_mel(base.join(&entry.mel), mel_cfg)?;
        out.push(RateExample::new(mel, entry.rate, entry.granularity)?);
    }
    Ok(out)
}

/// Vocabulary over the transcripts of a prepared corpus.
pub fn corpus_vocab(prepared: &[PreparedUtterance]) -> Vocab {
    let texts: Vec<String> = prepared.iter().map(|p| p.utt.text()).collect();
    Vocab::from_texts(texts.iter().map(String::as_str))
}

/// Splits each utterance at a seeded random eligible boundary. Utterances
/// without one, or whose split degenerates on the frame grid, are skipped
/// and counted.
pub fn build_tts_examples(
    prepared: &[PreparedUtterance],
    vocab: &Vocab,
    limits: BoundaryLimits,
    seed: u64,
) -> Result<(Vec<TTSTrainExample>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    let mut skipped = 0;
    for p in prepared {
        let built = select_boundary(&p.utt, &mut rng, limits)
            .and_then(|b| partition(&p.utt, b))
            .and_then(|split| make_train_example(&p.utt, &split, &p.mel, vocab));
        match built {
            Ok(ex) => examples.push(ex),
            Err(
                err @ (Error::NoEligibleBoundary(_)
                | Error::DegenerateSplit(_)
                | Error::TextOverflow { .. }),
            ) => {
                log::debug!("{}: {err}", p.utt.utt_id);
                skipped += 1;
            }
            Err(err) => return Err(err),
        }
    }
    Ok((examples, skipped))
}

/// Duration-evaluation items from a prepared corpus: each utterance is
/// split at a seeded eligible boundary; the prompt is the audio before it
/// and the reference duration is the time after it.
pub fn eval_items_from_prepared(
    prepared: &[PreparedUtterance],
    limits: BoundaryLimits,
    seed: u64,
) -> Result<Vec<EvalItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for p in prepared {
        let split =
            match select_boundary(&p.utt, &mut rng, limits).and_then(|b| partition(&p.utt, b)) {
                Ok(split) => split,
                Err(Error::NoEligibleBoundary(id)) => {
                    log::debug!("{id}: no eligible boundary");
                    continue;
                }
                Err(err) => return Err(err),
            };
        let cfg = p.mel.config();
        let end = cfg
            .seconds_to_frames(split.boundary_time())
            .min(p.mel.n_frames());
        if end == 0 {
            continue;
        }
        let prompt_words = AlignedUtterance {
            tokens: p.utt.tokens[..=split.boundary_index].to_vec(),
            ..p.utt.clone()
        };
        items.push(EvalItem {
            utt_id: p.utt.utt_id.clone(),
            prompt_mel: p.mel.slice_frames(0, end)?,
            prompt_text: Some(prompt_words.text()),
            target_text: split.target_text,
            gt_duration: split.target_interval.1 - split.target_interval.0,
            lang: p.utt.language,
        });
    }
    Ok(items)
}

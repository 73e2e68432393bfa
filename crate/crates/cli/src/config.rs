//! Run configuration: a TOML document with dotted keys, overridden by flags.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! command-line flags. Relative paths resolve against `paths.data_dir`,
//! which falls back to `$XLF5_DATA_DIR` and then the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xlf5::align::BoundaryLimits;
use xlf5::audio::MelConfig;
use xlf5::cfm::SamplerConfig;
use xlf5::infill::{InfillConfig, TtsTrainOptions};
use xlf5::rate::{PredictorConfig, RateTrainOptions};
use xlf5::units::Granularity;

use crate::CliError;

pub const DATA_DIR_ENV: &str = "XLF5_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub mel: MelConfig,
    pub predictor: PredictorSection,
    pub tts: TtsSection,
    pub sampler: SamplerConfig,
    pub split: BoundaryLimits,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            mel: MelConfig::default(),
            predictor: PredictorSection::default(),
            tts: TtsSection::default(),
            sampler: SamplerConfig::default(),
            split: BoundaryLimits::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub manifest: PathBuf,
    pub audio_root: Option<PathBuf>,
    pub prepared: PathBuf,
    pub checkpoints: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: None,
            manifest: "manifest.jsonl".into(),
            audio_root: None,
            prepared: "prepared".into(),
            checkpoints: "checkpoints".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub sigma: f64,
    pub normalize_labels: bool,
    pub train: RateTrainOptions,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let d = PredictorConfig::desk(Granularity::Syllable);
        Self {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            ff_mult: d.ff_mult,
            conv_kernel: d.conv_kernel,
            dropout: d.dropout,
            sigma: d.sigma,
            normalize_labels: d.normalize_labels,
            train: RateTrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtsSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub ff_mult: usize,
    pub text_dim: usize,
    pub dropout: f64,
    pub text_drop_prob: f64,
    pub train: TtsTrainOptions,
}

impl Default for TtsSection {
    fn default() -> Self {
        let d = InfillConfig::desk();
        Self {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            ff_mult: d.ff_mult,
            text_dim: d.text_dim,
            dropout: d.dropout,
            text_drop_prob: d.text_drop_prob,
            train: TtsTrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dataset: String,
    pub methods: Vec<String>,
    pub report: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset: "prepared".into(),
            methods: vec!["m1".into(), "m2".into(), "m3".into()],
            report: "duration_report.json".into(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file at `path` if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn predictor_config(&self, g: Granularity) -> PredictorConfig {
        let p = &self.predictor;
        PredictorConfig {
            granularity: g,
            mel: self.mel.clone(),
            n_layers: p.n_layers,
            n_heads: p.n_heads,
            d_model: p.d_model,
            ff_mult: p.ff_mult,
            conv_kernel: p.conv_kernel,
            dropout: p.dropout,
            sigma: p.sigma,
            normalize_labels: p.normalize_labels,
        }
    }

    pub fn infill_config(&self) -> InfillConfig {
        let t = &self.tts;
        InfillConfig {
            mel: self.mel.clone(),
            n_layers: t.n_layers,
            n_heads: t.n_heads,
            d_model: t.d_model,
            ff_mult: t.ff_mult,
            text_dim: t.text_dim,
            dropout: t.dropout,
            text_drop_prob: t.text_drop_prob,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// `path` if absolute, else joined onto the data directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir().join(path)
        }
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.resolve(&self.paths.prepared)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.paths.checkpoints)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn rate_checkpoint_name(g: Granularity) -> String {
    format!("rate_{g}.ckpt")
}

pub const TTS_CHECKPOINT: &str = "tts.ckpt";

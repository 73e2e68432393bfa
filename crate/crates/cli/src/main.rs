mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xlf5::units::Granularity;

use crate::config::RunConfig;

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<xlf5::Error> for CliError {
    fn from(e: xlf5::Error) -> Self {
        match e {
            xlf5::Error::Config(_)
            | xlf5::Error::ConfigMismatch(_)
            | xlf5::Error::InvalidCoefficient(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "xlf5",
    version,
    about = "Transcript-free infill TTS and speaking-rate duration tools"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for relative paths; defaults to $XLF5_DATA_DIR, then `.`.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    nfe: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    cfg_strength: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    sway: Option<f64>,
    /// Training epochs for train-rate / train-tts.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sanitize an aligned manifest and compute mels and rate labels.
    PrepareData {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory audio paths are relative to; defaults to the manifest's directory.
        #[arg(long)]
        audio_root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a speaking-rate predictor.
    TrainRate {
        #[arg(long, value_enum)]
        granularity: GranularityArg,
        /// Continue from the checkpoint in the checkpoint directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Train the infilling TTS model.
    TrainTts {
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Generate speech for `--text` in the voice of a prompt recording.
    Synthesize {
        #[arg(long)]
        prompt_wav: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out_wav: PathBuf,
        #[arg(long, value_enum, default_value = "m1")]
        duration_method: DurationMethodArg,
        /// Prompt transcript, needed only by `length_ratio`.
        #[arg(long)]
        ref_text: Option<String>,
        /// Target duration in seconds, needed only by `gt`.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum, default_value = "en")]
        lang: LangArg,
        /// Griffin-Lim iterations for the WAV rendering.
        #[arg(long, default_value_t = 32)]
        gl_iters: usize,
    },
    /// MAE/MRE of predicted durations on the prepared corpus.
    EvalDuration {
        /// Comma-separated: m1, m2, m3, length_ratio, gt, oracle_<granularity>.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small synthetic corpus (WAVs plus an aligned manifest).
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum GranularityArg {
    Phoneme,
    Syllable,
    Word,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Phoneme => Granularity::Phoneme,
            GranularityArg::Syllable => Granularity::Syllable,
            GranularityArg::Word => Granularity::Word,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationMethodArg {
    M1,
    M2,
    M3,
    #[value(name = "length_ratio")]
    LengthRatio,
    Gt,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum LangArg {
    En,
    Zh,
    Other,
}

impl From<LangArg> for xlf5::align::Language {
    fn from(l: LangArg) -> Self {
        match l {
            LangArg::En => xlf5::align::Language::En,
            LangArg::Zh => xlf5::align::Language::Zh,
            LangArg::Other => xlf5::align::Language::Other,
        }
    }
}

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &global.data_dir {
        cfg.paths.data_dir = Some(dir.clone());
    }
    if let Some(nfe) = global.nfe {
        cfg.sampler.nfe = nfe;
    }
    if let Some(w) = global.cfg_strength {
        cfg.sampler.cfg_strength = w;
    }
    if let Some(s) = global.sway {
        cfg.sampler.sway = s;
    }
    if let Some(epochs) = global.epochs {
        cfg.predictor.train.epochs = epochs;
        cfg.tts.train.epochs = epochs;
    }
    if cfg.paths.data_dir.is_none() {
        cfg.paths.data_dir = Some(cfg.data_dir());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    println!("# resolved config (hash {})", cfg.hash());
    print!("{}", cfg.to_toml());
    println!("# end config");
    match cli.command {
        Command::PrepareData {
            manifest,
            audio_root,
            out,
        } => commands::prepare_data(&cfg, manifest, audio_root, out),
        Command::TrainRate {
            granularity,
            resume,
            max_epochs,
        } => commands::train_rate(&cfg, granularity.into(), resume, max_epochs),
        Command::TrainTts { resume, max_epochs } => commands::train_tts(&cfg, resume, max_epochs),
        Command::Synthesize {
            prompt_wav,
            text,
            out_wav,
            duration_method,
            ref_text,
            duration,
            lang,
            gl_iters,
        } => commands::synthesize(
            &cfg,
            &commands::SynthesizeArgs {
                prompt_wav: cfg.resolve(&prompt_wav),
                text,
                out_wav: cfg.resolve(&out_wav),
                method: duration_method,
                ref_text,
                duration,
                lang: lang.into(),
                gl_iters,
            },
        ),
        Command::EvalDuration { methods, out } => commands::eval_duration(&cfg, methods, out),
        Command::SynthCorpus { out, n } => commands::synth_corpus(&cfg, &out, n),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xlf5: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

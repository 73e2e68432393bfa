use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde_json::json;
use xlf5::align::Language;
use xlf5::audio::{compute_mel, read_wav, write_mel, write_wav, GriffinLim, MelSpectrogram};
use xlf5::data::{
    build_tts_examples, corpus_vocab, eval_items_from_prepared, load_prepared, load_rate_manifest,
    prepare_corpus, rate_manifest_name,
};
use xlf5::duration::{
    estimate_duration, ground_truth_duration, length_ratio_duration, text_length, DurationEstimate,
};
use xlf5::eval::{run_duration_eval, EvalMethod, RateModels};
use xlf5::infill::{synthesize as infill_synthesize, InfillModel, TtsTrainer};
use xlf5::rate::{RateCategorySet, RatePredictorModel, RateTrainer};
use xlf5::toy::{generate_toy_corpus, write_toy_corpus, ToyCorpusConfig};
use xlf5::units::Granularity;

use crate::config::{rate_checkpoint_name, RunConfig, TTS_CHECKPOINT};
use crate::{CliError, DurationMethodArg};

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json values serialise");
    fs::write(path, text + "\n").map_err(|e| data_err(path, e))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} not found at {}",
            path.display()
        )))
    }
}

pub fn prepare_data(
    cfg: &RunConfig,
    manifest: Option<PathBuf>,
    audio_root: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let manifest = cfg.resolve(&manifest.unwrap_or_else(|| cfg.paths.manifest.clone()));
    let audio_root = match audio_root.or_else(|| cfg.paths.audio_root.clone()) {
        Some(root) => cfg.resolve(&root),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let out = out
        .map(|o| cfg.resolve(&o))
        .unwrap_or_else(|| cfg.prepared_dir());
    if !manifest.is_file() {
        return Err(CliError::Data(format!(
            "cannot read manifest {}",
            manifest.display()
        )));
    }
    let stats = prepare_corpus(&manifest, &audio_root, &out, &cfg.mel)?;
    write_json(
        &out.join("run.json"),
        &json!({"config_hash": cfg.hash(), "seed": cfg.seed, "stats": stats}),
    )?;
    println!(
        "kept {} utterances, dropped {} tokens and {} utterances -> {}",
        stats.kept,
        stats.dropped_tokens,
        stats.dropped_utts,
        out.display()
    );
    Ok(())
}

fn loss_log(cfg: &RunConfig, kind: &str, losses: &[f64], step: usize) -> serde_json::Value {
    json!({
        "kind": kind,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "step": step,
        "losses": losses,
    })
}

pub fn train_rate(
    cfg: &RunConfig,
    g: Granularity,
    resume: bool,
    max_epochs: Option<usize>,
) -> Result<(), CliError> {
    let manifest = cfg.prepared_dir().join(rate_manifest_name(g));
    require(&manifest, "prepared rate manifest (run prepare-data first)")?;
    let dataset = load_rate_manifest(&manifest, &cfg.mel)?;
    if dataset.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no examples",
            manifest.display()
        )));
    }
    let ckpt_dir = cfg.checkpoint_dir();
    fs::create_dir_all(&ckpt_dir).map_err(|e| data_err(&ckpt_dir, e))?;
    let ckpt = ckpt_dir.join(rate_checkpoint_name(g));
    let mut trainer = if resume {
        require(&ckpt, "rate checkpoint to resume")?;
        RateTrainer::resume(&ckpt, &Device::Cpu)?
    } else {
        let options = cfg.predictor.train.clone();
        RateTrainer::new(
            cfg.predictor_config(g),
            options,
            dataset.len(),
            cfg.seed,
            &Device::Cpu,
        )?
    };
    let mut ran = 0;
    while !trainer.is_finished() && max_epochs.is_none_or(|m| ran < m) {
        let loss = trainer.run_epoch(&dataset)?;
        ran += 1;
        trainer.save(&ckpt)?;
        println!(
            "epoch {} step {} loss {loss:.6}",
            trainer.epochs_done(),
            trainer.step()
        );
    }
    let log = ckpt_dir.join(format!("rate_{g}.losses.json"));
    write_json(
        &log,
        &loss_log(cfg, &format!("rate_{g}"), trainer.losses(), trainer.step()),
    )?;
    println!("checkpoint {} loss log {}", ckpt.display(), log.display());
    Ok(())
}

pub fn train_tts(cfg: &RunConfig, resume: bool, max_epochs: Option<usize>) -> Result<(), CliError> {
    let prepared_dir = cfg.prepared_dir();
    require(
        &prepared_dir.join(xlf5::data::PREPARED_MANIFEST),
        "prepared corpus (run prepare-data first)",
    )?;
    let prepared = load_prepared(&prepared_dir, &cfg.mel)?;
    let ckpt_dir = cfg.checkpoint_dir();
    fs::create_dir_all(&ckpt_dir).map_err(|e| data_err(&ckpt_dir, e))?;
    let ckpt = ckpt_dir.join(TTS_CHECKPOINT);
    let (mut trainer, vocab) = if resume {
        require(&ckpt, "TTS checkpoint to resume")?;
        let trainer = TtsTrainer::resume(&ckpt, &Device::Cpu)?;
        let vocab = trainer.model().vocab().clone();
        (Some(trainer), vocab)
    } else {
        (None, corpus_vocab(&prepared))
    };
    let (examples, skipped) = build_tts_examples(&prepared, &vocab, cfg.split, cfg.seed)?;
    if examples.is_empty() {
        return Err(CliError::Data(
            "no utterance yields a usable prompt/target split".into(),
        ));
    }
    println!(
        "{} training examples ({skipped} utterances skipped)",
        examples.len()
    );
    let mut trainer = match trainer.take() {
        Some(t) => t,
        None => TtsTrainer::new(
            cfg.infill_config(),
            vocab,
            cfg.tts.train.clone(),
            examples.len(),
            cfg.seed,
            &Device::Cpu,
        )?,
    };
    let mut ran = 0;
    while !trainer.is_finished() && max_epochs.is_none_or(|m| ran < m) {
        let loss = trainer.run_epoch(&examples)?;
        ran += 1;
        trainer.save(&ckpt)?;
        println!(
            "epoch {} step {} loss {loss:.6}",
            trainer.epochs_done(),
            trainer.step()
        );
    }
    let log = ckpt_dir.join("tts.losses.json");
    write_json(
        &log,
        &loss_log(cfg, "tts", trainer.losses(), trainer.step()),
    )?;
    println!("checkpoint {} loss log {}", ckpt.display(), log.display());
    Ok(())
}

pub struct SynthesizeArgs {
    pub prompt_wav: PathBuf,
    pub text: String,
    pub out_wav: PathBuf,
    pub method: DurationMethodArg,
    pub ref_text: Option<String>,
    pub duration: Option<f64>,
    pub lang: Language,
    pub gl_iters: usize,
}

fn load_rate_model(
    cfg: &RunConfig,
    g: Granularity,
    method: &str,
) -> Result<RatePredictorModel, CliError> {
    let path = cfg.checkpoint_dir().join(rate_checkpoint_name(g));
    if !path.exists() {
        return Err(CliError::Config(format!(
            "method {method} needs a {g}-level rate predictor checkpoint at {}",
            path.display()
        )));
    }
    Ok(RatePredictorModel::load(&path, &Device::Cpu)?)
}

fn resolve_duration(
    cfg: &RunConfig,
    args: &SynthesizeArgs,
    prompt: &MelSpectrogram,
) -> Result<DurationEstimate, CliError> {
    let mel_cfg = prompt.config();
    let granularity = match args.method {
        DurationMethodArg::M1 => Granularity::Phoneme,
        DurationMethodArg::M2 => Granularity::Syllable,
        DurationMethodArg::M3 => Granularity::Word,
        DurationMethodArg::LengthRatio => {
            let Some(ref_text) = &args.ref_text else {
                return Err(CliError::Usage(
                    "--duration-method length_ratio needs the prompt transcript via --ref-text"
                        .into(),
                ));
            };
            return Ok(length_ratio_duration(
                prompt.duration_seconds(),
                text_length(ref_text, args.lang),
                text_length(&args.text, args.lang),
                mel_cfg,
            )?);
        }
        DurationMethodArg::Gt => {
            let Some(seconds) = args.duration else {
                return Err(CliError::Usage(
                    "--duration-method gt needs --duration".into(),
                ));
            };
            return Ok(ground_truth_duration(seconds, mel_cfg)?);
        }
    };
    let key = EvalMethod::Predictor(granularity).key();
    let model = load_rate_model(cfg, granularity, &key)?;
    let clip = read_wav(&args.prompt_wav)?;
    let rate_mel = compute_mel(&clip, &model.config().mel)?;
    let mut estimate = estimate_duration(
        &model,
        &RateCategorySet::for_granularity(granularity),
        &rate_mel,
        &args.text,
        granularity,
        args.lang,
    )?;
    estimate.frames = xlf5::duration::to_frames(estimate.seconds, mel_cfg);
    Ok(estimate)
}

pub fn synthesize(cfg: &RunConfig, args: &SynthesizeArgs) -> Result<(), CliError> {
    if args.method == DurationMethodArg::LengthRatio && args.ref_text.is_none() {
        return Err(CliError::Usage(
            "--duration-method length_ratio needs the prompt transcript via --ref-text".into(),
        ));
    }
    if args.method == DurationMethodArg::Gt && args.duration.is_none() {
        return Err(CliError::Usage(
            "--duration-method gt needs --duration".into(),
        ));
    }
    let tts_path = cfg.checkpoint_dir().join(TTS_CHECKPOINT);
    require(&tts_path, "TTS checkpoint")?;
    let model = InfillModel::load(&tts_path, &Device::Cpu)?;
    let clip = read_wav(&args.prompt_wav)?;
    let prompt = compute_mel(&clip, &model.config().mel)?;
    let estimate = resolve_duration(cfg, args, &prompt)?;
    let mel = infill_synthesize(
        &model,
        &prompt,
        &args.text,
        estimate.seconds,
        &cfg.sampler,
        cfg.seed,
    )?;

    if let Some(parent) = args.out_wav.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    let mel_path = args.out_wav.with_extension("mel");
    write_mel(&mel, &mel_path)?;
    let audio = GriffinLim {
        iters: args.gl_iters,
        seed: cfg.seed,
    }
    .invert(&mel);
    write_wav(&audio, &args.out_wav)?;
    let sidecar = args.out_wav.with_extension("json");
    write_json(
        &sidecar,
        &json!({
            "duration_s": estimate.seconds,
            "frames": mel.n_frames(),
            "predicted_rate": estimate.predicted_rate,
            "unit_count": estimate.unit_count,
            "method": estimate.method.as_str(),
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
        }),
    )?;
    println!(
        "{} frames ({:.3} s, {}) -> {}",
        mel.n_frames(),
        estimate.seconds,
        estimate.method,
        args.out_wav.display()
    );
    Ok(())
}

pub fn eval_duration(
    cfg: &RunConfig,
    methods: Option<Vec<String>>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let names = methods.unwrap_or_else(|| cfg.eval.methods.clone());
    if names.is_empty() {
        return Err(CliError::Usage("no evaluation methods given".into()));
    }
    let methods = names
        .iter()
        .map(|m| EvalMethod::parse(m.trim()).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut loaded = Vec::new();
    for m in &methods {
        if let EvalMethod::Predictor(g) = m {
            if !loaded
                .iter()
                .any(|model: &RatePredictorModel| model.config().granularity == *g)
            {
                loaded.push(load_rate_model(cfg, *g, &m.key())?);
            }
        }
    }
    let prepared_dir = cfg.prepared_dir();
    require(
        &prepared_dir.join(xlf5::data::PREPARED_MANIFEST),
        "prepared corpus (run prepare-data first)",
    )?;
    let prepared = load_prepared(&prepared_dir, &cfg.mel)?;
    let items = eval_items_from_prepared(&prepared, cfg.split, cfg.seed)?;
    if items.is_empty() {
        return Err(CliError::Data(
            "no utterance yields an evaluation split".into(),
        ));
    }
    let mut models = RateModels::default();
    for model in &loaded {
        models.insert(model);
    }
    let report = run_duration_eval(&cfg.eval.dataset, &items, &methods, &models)?;
    print!("{}", report.render_table());
    let path = cfg.resolve(&out.unwrap_or_else(|| cfg.eval.report.clone()));
    write_json(
        &path,
        &json!({
            "dataset": report.dataset,
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "results": report.to_json(),
            "records": report.records,
        }),
    )?;
    println!("report {}", path.display());
    Ok(())
}

pub fn synth_corpus(cfg: &RunConfig, out: &Path, n: usize) -> Result<(), CliError> {
    let toy = ToyCorpusConfig {
        n_utterances: n,
        sample_rate: cfg.mel.sample_rate,
        ..ToyCorpusConfig::default()
    };
    let out = cfg.resolve(out);
    let corpus = generate_toy_corpus(&toy, cfg.seed)?;
    write_toy_corpus(&out, &corpus)?;
    println!(
        "{} utterances -> {}",
        corpus.len(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

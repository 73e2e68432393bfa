use candle_core::Device;
use xlf5::align::{BoundaryLimits, Language};
use xlf5::audio::MelConfig;
use xlf5::cfm::SamplerConfig;
use xlf5::data::{build_tts_examples, corpus_vocab, load_prepared, prepare_corpus};
use xlf5::duration::estimate_duration;
use xlf5::eval::{generate_synthetic_rate_corpus, synthetic_rate_specs, SyntheticCorpusConfig};
use xlf5::infill::{
    synthesize, InfillConfig, InfillModel, TTSTrainExample, TtsTrainOptions, TtsTrainer, Vocab,
};
use xlf5::rate::{PredictorConfig, RateExample, RatePredictorModel, RateTrainOptions, RateTrainer};
use xlf5::toy::{generate_toy_corpus, write_toy_corpus, ToyCorpusConfig};
use xlf5::units::Granularity;

fn tiny_predictor(mel: MelConfig) -> PredictorConfig {
    PredictorConfig {
        mel,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        ..PredictorConfig::desk(Granularity::Word)
    }
}

fn rate_corpus(n: usize) -> (Vec<RateExample>, PredictorConfig) {
    let corpus_cfg = SyntheticCorpusConfig::desk(Granularity::Word);
    let specs = synthetic_rate_specs(n, (1.0, 6.0), 0.1, 3);
    let examples = generate_synthetic_rate_corpus(&specs, &corpus_cfg, 4).unwrap();
    (examples, tiny_predictor(corpus_cfg.mel))
}

fn rate_options(epochs: usize) -> RateTrainOptions {
    RateTrainOptions {
        epochs,
        batch_size: 4,
        ..RateTrainOptions::default()
    }
}

fn tiny_infill() -> InfillConfig {
    InfillConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        text_dim: 8,
        ..InfillConfig::desk()
    }
}

fn tts_corpus(n: usize) -> (Vec<TTSTrainExample>, Vocab, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = dir.path().join("prepared");
    let cfg = ToyCorpusConfig {
        n_utterances: n,
        ..ToyCorpusConfig::default()
    };
    write_toy_corpus(&raw, &generate_toy_corpus(&cfg, 8).unwrap()).unwrap();
    let mel = MelConfig::default();
    prepare_corpus(&raw.join("manifest.jsonl"), &raw, &out, &mel).unwrap();
    let prepared = load_prepared(&out, &mel).unwrap();
    let vocab = corpus_vocab(&prepared);
    let (examples, _) =
        build_tts_examples(&prepared, &vocab, BoundaryLimits::default(), 2).unwrap();
    (examples, vocab, dir)
}

#[test]
fn rate_training_resumes_bit_exactly() {
    let (data, cfg) = rate_corpus(12);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("rate.ckpt");

    let mut full =
        RateTrainer::new(cfg.clone(), rate_options(3), data.len(), 6, &Device::Cpu).unwrap();
    full.train(&data).unwrap();

    let mut first = RateTrainer::new(cfg, rate_options(3), data.len(), 6, &Device::Cpu).unwrap();
    first.run_epoch(&data).unwrap();
    first.save(&ckpt).unwrap();
    drop(first);
    let mut resumed = RateTrainer::resume(&ckpt, &Device::Cpu).unwrap();
    assert_eq!(resumed.epochs_done(), 1);
    resumed.train(&data).unwrap();

    assert_eq!(resumed.losses(), full.losses());
    assert_eq!(resumed.step(), full.step());
    let probe = &data[0].mel;
    assert_eq!(
        resumed.model().forward(probe).unwrap(),
        full.model().forward(probe).unwrap()
    );
}

#[test]
fn rate_training_rejects_mixed_granularities() {
    let (mut data, cfg) = rate_corpus(4);
    let other = data[0].clone();
    data.push(RateExample::new(other.mel, other.true_rate, Granularity::Syllable).unwrap());
    let mut trainer = RateTrainer::new(cfg, rate_options(1), data.len(), 0, &Device::Cpu).unwrap();
    assert!(trainer.run_epoch(&data).is_err());
}

#[test]
fn batched_and_single_forward_agree() {
    let (data, cfg) = rate_corpus(5);
    let model = RatePredictorModel::new(cfg, 1, &Device::Cpu).unwrap();
    let mels: Vec<_> = data.iter().map(|e| &e.mel).collect();
    assert!(mels.windows(2).any(|w| w[0].n_frames() != w[1].n_frames()));
    let batched = model.forward_batch(&mels).unwrap();
    for (mel, row) in mels.iter().zip(&batched) {
        let single = model.forward(mel).unwrap();
        let worst = single
            .iter()
            .zip(row)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "padding changed the logits by {worst}");
        let total: f64 = single.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}

#[test]
fn saved_predictor_reloads_identically() {
    let (data, cfg) = rate_corpus(3);
    let model = RatePredictorModel::new(cfg, 9, &Device::Cpu).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = RatePredictorModel::load(&path, &Device::Cpu).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(
        back.forward(&data[1].mel).unwrap(),
        model.forward(&data[1].mel).unwrap()
    );
}

#[test]
fn untrained_predictor_reads_the_lowest_rate() {
    let (data, cfg) = rate_corpus(1);
    // A zero classifier gives uniform probabilities; ties go to class 0.
    let model = RatePredictorModel::with_zero_classifier(cfg, 0, &Device::Cpu).unwrap();
    let categories = model.categories().clone();
    let est = estimate_duration(
        &model,
        &categories,
        &data[0].mel,
        "one two three",
        Granularity::Word,
        Language::En,
    )
    .unwrap();
    assert_eq!(est.predicted_rate, Some(0.25));
    assert_eq!(est.unit_count, Some(3));
    assert!((est.seconds - 12.0).abs() < 1e-12);
}

#[test]
fn tts_training_resumes_bit_exactly() {
    let (examples, vocab, _dir) = tts_corpus(4);
    assert!(!examples.is_empty());
    let options = TtsTrainOptions {
        epochs: 3,
        batch_size: 2,
        ..TtsTrainOptions::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tts.ckpt");

    let mut full = TtsTrainer::new(
        tiny_infill(),
        vocab.clone(),
        options.clone(),
        examples.len(),
        5,
        &Device::Cpu,
    )
    .unwrap();
    full.train(&examples).unwrap();

    let mut first = TtsTrainer::new(
        tiny_infill(),
        vocab,
        options,
        examples.len(),
        5,
        &Device::Cpu,
    )
    .unwrap();
    first.run_epoch(&examples).unwrap();
    first.run_epoch(&examples).unwrap();
    first.save(&ckpt).unwrap();
    let mut resumed = TtsTrainer::resume(&ckpt, &Device::Cpu).unwrap();
    resumed.train(&examples).unwrap();

    assert_eq!(resumed.losses(), full.losses());
    assert_eq!(resumed.step(), full.step());
    assert!(resumed.losses().iter().all(|l| l.is_finite()));
}

#[test]
fn synthesis_length_follows_the_duration() {
    let (examples, vocab, _dir) = tts_corpus(2);
    let model = InfillModel::new(tiny_infill(), vocab, 3, &Device::Cpu).unwrap();
    let prompt = examples[0].mel.slice_frames(0, 100).unwrap();
    let sampler = SamplerConfig {
        nfe: 2,
        ..SamplerConfig::default()
    };
    let mel = synthesize(&model, &prompt, "lemon river", 2.0, &sampler, 1).unwrap();
    assert_eq!(mel.n_frames(), 188);
    assert_eq!(mel.n_mels(), model.config().mel.n_mels);
    let again = synthesize(&model, &prompt, "lemon river", 2.0, &sampler, 1).unwrap();
    assert_eq!(mel.data(), again.data());
    let other = synthesize(&model, &prompt, "lemon river", 2.0, &sampler, 2).unwrap();
    assert_ne!(mel.data(), other.data());

    assert!(synthesize(&model, &prompt, "   ", 2.0, &sampler, 1).is_err());
    assert!(synthesize(&model, &prompt, "lemon", 0.0, &sampler, 1).is_err());
}

#[test]
fn saved_infill_model_reloads_identically() {
    let (examples, vocab, _dir) = tts_corpus(2);
    let model = InfillModel::new(tiny_infill(), vocab, 4, &Device::Cpu).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tts.ckpt");
    model.save(&path).unwrap();
    let back = InfillModel::load(&path, &Device::Cpu).unwrap();
    let prompt = examples[0].mel.slice_frames(0, 50).unwrap();
    let sampler = SamplerConfig {
        nfe: 2,
        ..SamplerConfig::default()
    };
    let a = synthesize(&model, &prompt, "pilot", 0.5, &sampler, 7).unwrap();
    let b = synthesize(&back, &prompt, "pilot", 0.5, &sampler, 7).unwrap();
    assert_eq!(a.data(), b.data());
}

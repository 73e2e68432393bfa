//! Trains a desk-size syllable-rate predictor on synthetic pulse trains and
//! reports held-out accuracy.
//!
//! cargo run --release -p xlf5-core --example train_synthetic_rate -- [n_train] [n_test] [epochs]

use std::time::Instant;

use candle_core::Device;
use xlf5::eval::{generate_synthetic_rate_corpus, synthetic_rate_specs, SyntheticCorpusConfig};
use xlf5::rate::{PredictorConfig, RateTrainOptions, RateTrainer};
use xlf5::units::Granularity;

fn main() -> xlf5::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let n_train = args.first().copied().unwrap_or(2000);
    let n_test = args.get(1).copied().unwrap_or(400);
    let epochs = args.get(2).copied().unwrap_or(12);

    let g = Granularity::Syllable;
    let corpus_cfg = SyntheticCorpusConfig::desk(g);
    let train = generate_synthetic_rate_corpus(
        &synthetic_rate_specs(n_train, (1.0, 7.0), 0.1, 1),
        &corpus_cfg,
        11,
    )?;
    let test = generate_synthetic_rate_corpus(
        &synthetic_rate_specs(n_test, (1.0, 7.0), 0.1, 2),
        &corpus_cfg,
        12,
    )?;

    let cfg = PredictorConfig {
        mel: corpus_cfg.mel.clone(),
        ..PredictorConfig::desk(g)
    };
    let options = RateTrainOptions {
        epochs,
        ..RateTrainOptions::default()
    };
    let mut trainer = RateTrainer::new(cfg, options, train.len(), 0, &Device::Cpu)?;
    let start = Instant::now();
    while !trainer.is_finished() {
        let loss = trainer.run_epoch(&train)?;
        let model = trainer.model();
        let cats = model.categories();
        let mut hits = 0;
        for ex in &test {
            let pred = model.predict_rate(&ex.mel)?;
            let truth = cats.rate_to_category(ex.true_rate)?;
            if cats.rate_to_category(pred)?.abs_diff(truth) <= 1 {
                hits += 1;
            }
        }
        println!(
            "epoch {:>2} loss {loss:.4} within-1 {:.1}% ({:.0}s)",
            trainer.epochs_done(),
            100.0 * hits as f64 / test.len() as f64,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

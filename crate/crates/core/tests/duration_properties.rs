use proptest::prelude::*;
use xlf5::audio::MelConfig;
use xlf5::duration::{
    duration_from_rate, ground_truth_duration, length_ratio_duration, to_frames, DurationMethod,
};
use xlf5::eval::{mae, mre, DurationEvalRecord};
use xlf5::units::Granularity;
use xlf5::Error;

fn records(pairs: &[(f64, f64)]) -> Vec<DurationEvalRecord> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(pred, gt))| DurationEvalRecord {
            utt_id: format!("u{i}"),
            predicted_seconds: pred,
            ground_truth_seconds: gt,
            method: "m".into(),
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn empty_record_sets_are_rejected() {
    assert!(mae(&[]).is_err());
    assert!(mre(&[]).is_err());
    assert!(mre(&records(&[(1.0, 0.0)])).is_err());
}

#[test]
fn length_ratio_needs_nonzero_lengths() {
    let cfg = MelConfig::default();
    assert!(length_ratio_duration(3.0, 0, 4, &cfg).is_err());
    assert!(length_ratio_duration(3.0, 4, 0, &cfg).is_err());
    assert!(length_ratio_duration(0.0, 4, 4, &cfg).is_err());
    assert!(ground_truth_duration(-1.0, &cfg).is_err());
}

#[test]
fn rate_estimates_reject_bad_rates_and_caps() {
    let cfg = MelConfig::default();
    for rate in [0.0, -2.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(
            duration_from_rate(4, rate, Granularity::Word, &cfg, 60.0),
            Err(Error::InvalidRate(_))
        ));
    }
    assert!(duration_from_rate(0, 2.0, Granularity::Word, &cfg, 60.0).is_err());
    assert!(matches!(
        duration_from_rate(130, 2.0, Granularity::Word, &cfg, 60.0),
        Err(Error::DurationOutOfRange { .. })
    ));
}

proptest! {
    #[test]
    fn mae_ignores_record_order(
        pairs in prop::collection::vec((0.1f64..20.0, 0.1f64..20.0), 1..40),
        rotate in 0usize..40,
    ) {
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert!(close(mae(&records(&pairs)).unwrap(), mae(&records(&shuffled)).unwrap()));
        prop_assert!(close(mre(&records(&pairs)).unwrap(), mre(&records(&shuffled)).unwrap()));
    }

    #[test]
    fn mae_scales_and_mre_does_not(
        pairs in prop::collection::vec((0.1f64..20.0, 0.1f64..20.0), 1..40),
        k in 0.01f64..100.0,
    ) {
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(p, g)| (p * k, g * k)).collect();
        prop_assert!(close(mae(&records(&scaled)).unwrap(), k * mae(&records(&pairs)).unwrap()));
        prop_assert!(close(mre(&records(&scaled)).unwrap(), mre(&records(&pairs)).unwrap()));
    }

    #[test]
    fn perfect_predictions_score_zero(gts in prop::collection::vec(0.1f64..20.0, 1..40)) {
        let pairs: Vec<(f64, f64)> = gts.iter().map(|&g| (g, g)).collect();
        prop_assert_eq!(mae(&records(&pairs)).unwrap(), 0.0);
        prop_assert_eq!(mre(&records(&pairs)).unwrap(), 0.0);
    }

    #[test]
    fn rate_times_duration_recovers_units(units in 1usize..400, rate in 0.25f64..18.0) {
        let cfg = MelConfig::default();
        let est = duration_from_rate(units, rate, Granularity::Phoneme, &cfg, f64::INFINITY).unwrap();
        prop_assert!(close(est.seconds * rate, units as f64));
        let exact = est.seconds * f64::from(cfg.sample_rate) / cfg.hop as f64;
        prop_assert_eq!(est.frames, ((exact + 0.5).floor() as usize).max(1));
        prop_assert_eq!(est.method, DurationMethod::RatePhoneme);
        prop_assert_eq!(est.unit_count, Some(units));
    }

    #[test]
    fn length_ratio_is_proportional(prompt in 0.5f64..30.0, r in 1usize..200, t in 1usize..200) {
        let cfg = MelConfig::default();
        let est = length_ratio_duration(prompt, r, t, &cfg).unwrap();
        prop_assert!(close(est.seconds * r as f64, prompt * t as f64));
        let same = length_ratio_duration(prompt, r, r, &cfg).unwrap();
        prop_assert!(close(same.seconds, prompt));
    }

    #[test]
    fn frame_counts_are_monotone(a in 0.0f64..60.0, b in 0.0f64..60.0) {
        let cfg = MelConfig::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(to_frames(lo, &cfg) <= to_frames(hi, &cfg));
        prop_assert!(to_frames(lo, &cfg) >= 1);
    }
}

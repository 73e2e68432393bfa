use candle_core::{Device, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlf5::cfm::{
    cfg_combine, masked_mse, ot_interpolate, ot_interpolate_batch, sample_flow_step, sway,
    time_grid, FlowStep, LatentPair,
};
use xlf5::Error;

fn tensor(values: &[f32], shape: (usize, usize)) -> Tensor {
    Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
}

fn to_vec(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

#[test]
fn flow_steps_are_uniform() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draws: Vec<f64> = (0..n).map(|_| sample_flow_step(&mut rng).value()).collect();
    assert!(draws.iter().all(|&t| (0.0..1.0).contains(&t)));
    let mean = draws.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.005, "mean {mean}");

    // One-sample Kolmogorov-Smirnov against U(0, 1) at the 1% level.
    draws.sort_by(f64::total_cmp);
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} exceeds {critical}");
}

#[test]
fn flow_step_range_is_enforced() {
    assert!(FlowStep::new(0.0).is_ok() && FlowStep::new(1.0).is_ok());
    assert!(FlowStep::new(-1e-9).is_err());
    assert!(FlowStep::new(1.0 + 1e-9).is_err());
    assert!(FlowStep::new(f64::NAN).is_err());
}

#[test]
fn sway_rejects_large_coefficients() {
    let t = FlowStep::new(0.3).unwrap();
    assert!(matches!(sway(t, 1.5), Err(Error::InvalidCoefficient(_))));
    assert!(matches!(
        sway(t, f64::NAN),
        Err(Error::InvalidCoefficient(_))
    ));
}

proptest! {
    #[test]
    fn sway_stays_in_range_and_keeps_order(s in -1.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let w_lo = sway(FlowStep::new(lo).unwrap(), s).unwrap().value();
        let w_hi = sway(FlowStep::new(hi).unwrap(), s).unwrap().value();
        prop_assert!((0.0..=1.0).contains(&w_lo) && (0.0..=1.0).contains(&w_hi));
        prop_assert!(w_lo <= w_hi + 1e-12);
        prop_assert_eq!(sway(FlowStep::new(0.0).unwrap(), s).unwrap().value(), 0.0);
        prop_assert_eq!(sway(FlowStep::new(1.0).unwrap(), s).unwrap().value(), 1.0);
    }

    #[test]
    fn negative_sway_packs_early_steps(s in -1.0f64..0.0, t in 0.01f64..0.99) {
        prop_assert!(sway(FlowStep::new(t).unwrap(), s).unwrap().value() <= t);
    }

    #[test]
    fn time_grid_runs_from_zero_to_one(nfe in 1usize..64, s in -1.0f64..=1.0) {
        let grid = time_grid(nfe, s).unwrap();
        prop_assert_eq!(grid.len(), nfe + 1);
        prop_assert_eq!(grid[0], 0.0);
        prop_assert_eq!(grid[nfe], 1.0);
        prop_assert!(grid.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn guidance_is_the_affine_blend(
        c in prop::collection::vec(-3.0f32..3.0, 6),
        u in prop::collection::vec(-3.0f32..3.0, 6),
        w in -2.0f64..4.0,
    ) {
        let out = to_vec(&cfg_combine(&tensor(&c, (2, 3)), &tensor(&u, (2, 3)), w).unwrap());
        for i in 0..6 {
            let expected = f64::from(u[i]) + w * f64::from(c[i] - u[i]);
            prop_assert!((f64::from(out[i]) - expected).abs() < 1e-4);
        }
        let same = to_vec(&cfg_combine(&tensor(&c, (2, 3)), &tensor(&c, (2, 3)), w).unwrap());
        for i in 0..6 {
            prop_assert!((same[i] - c[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn interpolation_is_linear_in_t(
        x0 in prop::collection::vec(-3.0f32..3.0, 8),
        x1 in prop::collection::vec(-3.0f32..3.0, 8),
        t in 0.0f64..=1.0,
    ) {
        let pair = LatentPair::new(tensor(&x0, (2, 4)), tensor(&x1, (2, 4))).unwrap();
        let xt = to_vec(&ot_interpolate(&pair, FlowStep::new(t).unwrap()).unwrap());
        for i in 0..8 {
            let expected = (1.0 - t) * f64::from(x0[i]) + t * f64::from(x1[i]);
            prop_assert!((f64::from(xt[i]) - expected).abs() < 1e-5);
        }
        prop_assert_eq!(to_vec(&ot_interpolate(&pair, FlowStep::new(0.0).unwrap()).unwrap()), x0.clone());
        prop_assert_eq!(to_vec(&ot_interpolate(&pair, FlowStep::new(1.0).unwrap()).unwrap()), x1.clone());

        let batched = to_vec(&ot_interpolate_batch(&pair, &[t, t]).unwrap());
        for i in 0..8 {
            prop_assert!((batched[i] - xt[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_mse_matches_a_direct_sum(
        pred in prop::collection::vec(-3.0f32..3.0, 12),
        target in prop::collection::vec(-3.0f32..3.0, 12),
        mask in prop::collection::vec(prop::bool::ANY, 4),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let m: Vec<f32> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mask_t = Tensor::from_vec(m, 4, &Device::Cpu).unwrap();
        let got: f32 = masked_mse(&tensor(&pred, (4, 3)), &tensor(&target, (4, 3)), Some(&mask_t))
            .unwrap()
            .to_scalar()
            .unwrap();
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for f in 0..4 {
            if mask[f] {
                for c in 0..3 {
                    let d = f64::from(pred[f * 3 + c] - target[f * 3 + c]);
                    sum += d * d;
                    count += 1;
                }
            }
        }
        prop_assert!((f64::from(got) - sum / count as f64).abs() < 1e-4);
    }
}

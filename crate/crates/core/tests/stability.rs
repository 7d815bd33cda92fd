use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitstem::optim::OptimizerKind;
use vitstem::stability::{compute_edf, delta_to_asymptotic, ks_test, sample_lr_wd, Edf, RunRecord, SweepSpec};

fn is_valid_cdf_path(e: &Edf) -> bool {
    e.deltas.first() == Some(&0.0)
        && e.deltas.windows(2).all(|w| w[0] < w[1])
        && e.cum_fracs.windows(2).all(|w| w[0] < w[1])
        && e.deltas.iter().all(|&d| d >= 0.0)
        && *e.cum_fracs.last().unwrap() == 1.0
}

#[test]
fn edf_is_valid_and_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        // Coarse grid so ties are common.
        let mut errs: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0).collect();
        let e = compute_edf(&errs).unwrap();
        assert!(is_valid_cdf_path(&e), "{errs:?} -> {e:?}");
        errs.shuffle(&mut rng);
        assert_eq!(compute_edf(&errs).unwrap(), e);
    }
}

#[test]
fn sampled_marginals_are_log_uniform() {
    let mut spec = SweepSpec::new(2.0e-3, 0.2, 123);
    spec.n_samples = 10_000;
    let draws = sample_lr_wd(&spec).unwrap();
    for (center, pick) in [(spec.center_lr, 0usize), (spec.center_wd, 1)] {
        let (a, b) = ((center * spec.low_factor).ln(), (center * spec.high_factor).ln());
        let xs: Vec<f64> = draws.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
        let (d, p) = ks_test(&xs, |x| ((x.ln() - a) / (b - a)).clamp(0.0, 1.0)).unwrap();
        assert!(p > 0.01, "KS d={d} p={p}");
        // Uniform on the linear scale must be rejected.
        let (lo, hi) = (a.exp(), b.exp());
        let (_, p_lin) = ks_test(&xs, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).unwrap();
        assert!(p_lin < 0.01);
    }
}

fn record(model: &str, epochs: usize, err: f64) -> RunRecord {
    RunRecord {
        id: format!("{model}/{epochs}/{err}"),
        model_name: model.into(),
        optimizer: OptimizerKind::Adamw,
        lr: 1e-3,
        wd: 0.05,
        epochs,
        seed: 0,
        final_top1_err: err,
        best_top1_err: err,
        raw_top1_err: err,
        ema_top1_err: err,
        used_ema: false,
        ema_decay: 0.9998,
        diverged: false,
        initial_train_loss: None,
        final_train_loss: None,
        wall_time_seconds: 1.0,
        workers: 1,
        normalized_epoch_minutes: 0.1,
    }
}

proptest! {
    #[test]
    fn deltas_ignore_a_constant_shift(errs in prop::collection::vec(0.0f64..50.0, 4), shift in -10.0f64..40.0) {
        let epochs = [50usize, 100, 200, 400];
        let base: Vec<RunRecord> = epochs.iter().zip(&errs).map(|(&e, &x)| record("m", e, x + 10.0)).collect();
        let shifted: Vec<RunRecord> = epochs.iter().zip(&errs).map(|(&e, &x)| record("m", e, x + 10.0 + shift)).collect();
        let a = delta_to_asymptotic(&base, 400).unwrap();
        let b = delta_to_asymptotic(&shifted, 400).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.delta - y.delta).abs() < 1e-9);
        }
    }
}

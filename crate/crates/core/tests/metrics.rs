mod support;

use proptest::prelude::*;
use support::{brute_metrics, continuous_instance, random_instance};
use tce_core::eval::{auc_bias_sweep, compute_metrics, harmonic_mean, ScoreMatrix, SmaxMode, SweepOptions};
use tce_core::rng::{stream, Stream};
use tce_core::TceError;

fn options(bins: usize, per_image: bool) -> SweepOptions {
    SweepOptions {
        bins,
        smax_mode: if per_image {
            SmaxMode::PerImage
        } else {
            SmaxMode::Global
        },
    }
}

fn check_against_brute(seed: u64, bins: usize, per_image: bool) {
    let mut rng = stream(seed, Stream::Sampling);
    let (scores, labels) = random_instance(&mut rng, 20, 12);
    let opts = options(bins, per_image);
    let got = compute_metrics(&scores, &labels, &opts).unwrap();
    let want = brute_metrics(&scores, &labels, bins, opts.smax_mode);
    assert_eq!(got.closed_unseen, want.closed_unseen, "seed {seed}");
    assert_eq!(got.open_unseen, want.open_unseen, "seed {seed}");
    assert_eq!(got.open_seen, want.open_seen, "seed {seed}");
    assert_eq!(got.attr_acc, want.attr_acc, "seed {seed}");
    assert_eq!(got.obj_acc, want.obj_acc, "seed {seed}");
    assert_eq!(got.unseen_hm, harmonic_mean(want.closed_unseen, want.open_unseen));
    assert_eq!(got.all_hm, harmonic_mean(want.open_unseen, want.open_seen));
    match want.auc {
        Some(auc) => {
            assert!((got.auc - auc).abs() <= 1e-9, "seed {seed}: auc {} vs {auc}", got.auc);
            let sweep = auc_bias_sweep(&scores, &labels, &opts).unwrap();
            assert_eq!(sweep.auc, got.auc);
        }
        None => {
            assert_eq!(got.auc, 0.0);
            assert!(matches!(
                auc_bias_sweep(&scores, &labels, &opts),
                Err(TceError::Precondition(_))
            ));
        }
    }
}

#[test]
fn fifty_fixed_instances_match_brute_force() {
    for seed in 0..50 {
        check_against_brute(seed, 100, false);
    }
}

proptest! {
    #[test]
    fn metrics_match_brute_force(seed in any::<u64>(), bins in 1usize..40, per_image in any::<bool>()) {
        check_against_brute(seed, bins, per_image);
    }

    #[test]
    fn bias_zero_point_equals_unbiased(seed in any::<u64>(), bins in 1usize..120) {
        let mut rng = stream(seed, Stream::Sampling);
        let (scores, labels) = random_instance(&mut rng, 20, 12);
        let opts = options(bins, false);
        let m = compute_metrics(&scores, &labels, &opts).unwrap();
        if let Ok(sweep) = auc_bias_sweep(&scores, &labels, &opts) {
            let zero: Vec<_> = sweep.curve.iter().filter(|p| p.bias == 0.0).collect();
            prop_assert_eq!(zero.len(), 1);
            prop_assert_eq!(zero[0].open_seen, m.open_seen);
            prop_assert_eq!(zero[0].open_unseen, m.open_unseen);
            prop_assert!(sweep.curve.windows(2).all(|w| w[0].bias < w[1].bias));
        }
    }

    #[test]
    fn closed_unseen_bounds_open_unseen(seed in any::<u64>()) {
        let mut rng = stream(seed, Stream::Sampling);
        let (scores, labels) = random_instance(&mut rng, 20, 12);
        let m = compute_metrics(&scores, &labels, &SweepOptions::default()).unwrap();
        prop_assert!(m.closed_unseen >= m.open_unseen);
        prop_assert!((0.0..=100.0).contains(&m.auc));
    }

    #[test]
    fn auc_invariant_under_power_of_two_rescaling(seed in any::<u64>(), exp in -6i32..7, per_image in any::<bool>()) {
        let mut rng = stream(seed, Stream::Sampling);
        let (scores, labels) = random_instance(&mut rng, 20, 12);
        let opts = options(100, per_image);
        let a = compute_metrics(&scores, &labels, &opts).unwrap();
        let b = compute_metrics(&scores.scaled(2f64.powi(exp)), &labels, &opts).unwrap();
        prop_assert_eq!(a, b);
    }
}

// Non-dyadic factors round the scores themselves, so exact ties in integer
// score matrices may break; continuous scores have no such ties.
#[test]
fn auc_invariant_under_arbitrary_rescaling() {
    for seed in 0..50 {
        let mut rng = stream(seed, Stream::Sampling);
        let (scores, labels) = continuous_instance(&mut rng, 20, 12);
        let opts = SweepOptions::default();
        let a = compute_metrics(&scores, &labels, &opts).unwrap();
        for factor in [0.1, 0.37, 3.0, 7.5, 1e3] {
            let b = compute_metrics(&scores.scaled(factor), &labels, &opts).unwrap();
            assert_eq!(a.auc, b.auc, "seed {seed} factor {factor}");
        }
    }
}

#[test]
fn perfect_scores_give_full_area() {
    let mut rng = stream(9, Stream::Sampling);
    let (scores, labels) = random_instance(&mut rng, 20, 12);
    let mut perfect = scores.scores().mapv(|_| -1.0);
    for (i, l) in labels.iter().enumerate() {
        perfect[[i, scores.column_of(*l).unwrap()]] = 1.0;
    }
    let s = ScoreMatrix::new(perfect, scores.columns().to_vec()).unwrap();
    let m = compute_metrics(&s, &labels, &SweepOptions::default()).unwrap();
    assert_eq!(m.open_seen.max(m.open_unseen), 100.0);
    if labels
        .iter()
        .any(|l| scores.columns()[scores.column_of(*l).unwrap()].seen)
        && labels
            .iter()
            .any(|l| !scores.columns()[scores.column_of(*l).unwrap()].seen)
    {
        assert_eq!(m.auc, 100.0);
    }
}

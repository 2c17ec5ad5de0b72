//! Shape, run-length and involution contracts of the augmentations on
//! randomized windows.

mod support;

use ecg_ssl::augment::{apply, channel_scale, mask_with_runs, negate, time_warp, COMBINATION_POOL};
use ecg_ssl::rng::RngStream;
use proptest::prelude::*;
use support::augment::{grid_time_warp_pairs, random_specs, window};

const CASES: u32 = 1000;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn every_augmentation_preserves_shape(n_leads in 1usize..=4, len in 10usize..=300, seed in any::<u64>()) {
        let x = window(n_leads, len, seed);
        let mut rng = RngStream::new(seed ^ 0x5eed);
        let specs = random_specs(&mut rng);
        let kinds: std::collections::BTreeSet<&str> = specs.iter().map(|s| s.name()).collect();
        prop_assert_eq!(kinds.len(), 8);
        for spec in specs {
            let y = apply(&x, &spec, &mut rng).unwrap();
            prop_assert_eq!(y.n_leads(), n_leads, "{:?}", spec);
            for lead in &y.data {
                prop_assert_eq!(lead.len(), len, "{:?}", spec);
                prop_assert!(lead.iter().all(|v| v.is_finite()), "{:?}", spec);
            }
        }
    }

    #[test]
    fn mask_runs_respect_bounds(
        n_leads in 1usize..=4,
        len in 10usize..=400,
        a_pct in 0.0f64..=100.0,
        width in 0.0f64..=100.0,
        seed in any::<u64>(),
    ) {
        let b_pct = (a_pct + width).min(100.0);
        let x = window(n_leads, len, seed);
        let (y, runs) = mask_with_runs(&x, a_pct, b_pct, &mut RngStream::new(seed));
        let lo = (a_pct / 100.0 * len as f64).round() as usize;
        let hi = (b_pct / 100.0 * len as f64).round() as usize;
        prop_assert_eq!(runs.len(), n_leads);
        for (l, run) in runs.iter().enumerate() {
            prop_assert!(lo <= run.len && run.len <= hi, "run {} outside [{}, {}]", run.len, lo, hi);
            prop_assert!(run.start + run.len <= len);
            for t in 0..len {
                let inside = run.start <= t && t < run.start + run.len;
                let expected = if inside { 0.0 } else { x.data[l][t] };
                prop_assert_eq!(y.data[l][t], expected);
            }
        }
    }

    #[test]
    fn time_warp_keeps_length_for_grid_pairs(n_leads in 1usize..=3, len in 6usize..=500, seed in any::<u64>()) {
        let x = window(n_leads, len, seed);
        let mut rng = RngStream::new(seed);
        for (w, r_pct) in grid_time_warp_pairs() {
            let y = time_warp(&x, w, r_pct, &mut rng).unwrap();
            prop_assert_eq!(y.n_leads(), n_leads);
            prop_assert!(y.data.iter().all(|lead| lead.len() == len));
        }
    }

    #[test]
    fn negation_is_an_involution(n_leads in 1usize..=4, len in 1usize..=300, seed in any::<u64>()) {
        let x = window(n_leads, len, seed);
        let once = negate(&x);
        prop_assert_eq!(negate(&once), x.clone());
        for (a, b) in once.data.iter().flatten().zip(x.data.iter().flatten()) {
            prop_assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn channel_scale_ratios_stay_in_range(len in 1usize..=100, a in 0.05f64..2.0, span in 0.0f64..3.0, seed in any::<u64>()) {
        let x = window(3, len, seed);
        let b = a + span;
        let y = channel_scale(&x, a, b, &mut RngStream::new(seed));
        for (lx, ly) in x.data.iter().zip(&y.data) {
            let i = lx.iter().position(|v| v.abs() > 1e-6).unwrap();
            let s = ly[i] / lx[i];
            prop_assert!(a <= s && s <= b);
            for (u, v) in lx.iter().zip(ly) {
                prop_assert!((v - s * u).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}

#[test]
fn evaluation_grid_holds_three_time_warp_pairs() {
    assert_eq!(grid_time_warp_pairs(), vec![(1, 10.0), (3, 5.0), (3, 10.0)]);
}

#[test]
fn combination_pool_recipes_are_valid() {
    for spec in COMBINATION_POOL {
        spec.validate().unwrap();
    }
}

#[test]
fn time_warp_at_default_window_length() {
    let x = window(12, 250, 3);
    for (w, r_pct) in grid_time_warp_pairs() {
        for seed in 0..50 {
            let y = time_warp(&x, w, r_pct, &mut RngStream::new(seed)).unwrap();
            assert!(y.data.iter().all(|lead| lead.len() == 250));
        }
    }
}

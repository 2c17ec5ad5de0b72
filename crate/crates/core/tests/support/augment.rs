//! Random windows and augmentation recipes.

use ecg_ssl::augment::AugmentationSpec;
use ecg_ssl::rng::RngStream;
use ecg_ssl::signal::Window;

pub fn window(n_leads: usize, len: usize, seed: u64) -> Window {
    let mut rng = RngStream::new(seed);
    let data = (0..n_leads)
        .map(|_| (0..len).map(|_| rng.normal(0.0, 1.0)).collect())
        .collect();
    Window::from_data(data)
}

/// One valid recipe of each of the eight kinds, with parameters drawn from
/// `rng` over ranges wider than the evaluation grid. Time-warp stretches
/// stay below 50%, past which up to two thirds of the segments can leave
/// no room for the squeezed rest.
pub fn random_specs(rng: &mut RngStream) -> [AugmentationSpec; 8] {
    let a = rng.uniform(0.05, 2.0);
    let a_pct = rng.uniform(0.0, 60.0);
    [
        AugmentationSpec::GaussianNoise {
            sigma: rng.uniform(1e-3, 2.0),
        },
        AugmentationSpec::ChannelScaling {
            a,
            b: a + rng.uniform(0.0, 3.0),
        },
        AugmentationSpec::Negation {},
        AugmentationSpec::BaselineWander {
            f_w: rng.uniform(1.0, 300.0),
            s_bw: rng.uniform(0.0, 2.0),
        },
        AugmentationSpec::EmgNoise {
            sigma: rng.uniform(1e-3, 2.0),
        },
        AugmentationSpec::Masking {
            a_pct,
            b_pct: a_pct + rng.uniform(0.0, 40.0),
        },
        AugmentationSpec::TimeWarping {
            w: 1 + rng.below(5),
            r_pct: rng.uniform(0.5, 40.0),
        },
        AugmentationSpec::Combination {},
    ]
}

pub fn grid_time_warp_pairs() -> Vec<(usize, f64)> {
    AugmentationSpec::grid()
        .into_iter()
        .filter_map(|s| match s {
            AugmentationSpec::TimeWarping { w, r_pct } => Some((w, r_pct)),
            _ => None,
        })
        .collect()
}

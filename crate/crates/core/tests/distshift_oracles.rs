//! Overlap index against closed-form Gaussian overlaps and its symmetry,
//! rigid-motion and subsampling properties.

use std::time::Instant;

use ecg_ssl::distshift::{
    analyze_embeddings, analyze_reduced, axis_overlap, kde_pair, overlap_index, read_reduced_csv,
    EmbeddingSet, DEFAULT_RESOLUTION,
};
use ecg_ssl::rng::RngStream;

/// `2 Phi(-1)`, the overlap of two unit Gaussians whose means are 2 apart.
const TWO_SIGMA_OVERLAP: f64 = 0.317_310_507_862_914;

fn gaussian(n: usize, mean: [f64; 2], std: f64, rng: &mut RngStream) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            [
                mean[0] + std * rng.standard_normal(),
                mean[1] + std * rng.standard_normal(),
            ]
        })
        .collect()
}

fn eta(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let (ga, gb) = kde_pair(a, b, DEFAULT_RESOLUTION).unwrap();
    overlap_index(&ga, &gb).unwrap()
}

#[test]
fn unit_gaussians_two_sigma_apart() {
    let start = Instant::now();
    for seed in 0..3 {
        let mut rng = RngStream::new(seed);
        let a = gaussian(10_000, [0.0, 0.0], 1.0, &mut rng);
        let b = gaussian(10_000, [2.0, 0.0], 1.0, &mut rng);
        let (ga, gb) = kde_pair(&a, &b, DEFAULT_RESOLUTION).unwrap();
        let e = overlap_index(&ga, &gb).unwrap();
        let axes = axis_overlap(&ga, &gb).unwrap();
        assert!(
            (e - TWO_SIGMA_OVERLAP).abs() <= 0.02,
            "seed {seed}: eta {e}"
        );
        assert!(
            (axes[0] - TWO_SIGMA_OVERLAP).abs() <= 0.02,
            "seed {seed}: x overlap {}",
            axes[0]
        );
        assert!(axes[1] >= 0.95, "seed {seed}: y overlap {}", axes[1]);
    }
    assert!(start.elapsed().as_secs() < 30 * 3);
}

#[test]
fn identical_sets_overlap_fully() {
    let mut rng = RngStream::new(4);
    let a = gaussian(2000, [1.0, -2.0], 3.0, &mut rng);
    let e = eta(&a, &a);
    assert!(e >= 0.99, "{e}");
    assert!((e - 1.0).abs() <= 1e-3);
}

#[test]
fn clusters_twenty_bandwidths_apart_do_not_overlap() {
    let mut rng = RngStream::new(5);
    let a = gaussian(2000, [0.0, 0.0], 1.0, &mut rng);
    let (ga, _) = kde_pair(&a, &a, DEFAULT_RESOLUTION).unwrap();
    let h = ga.bandwidth[0].max(ga.bandwidth[1]);
    let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 20.0 * h, p[1]]).collect();
    // shifting a copy keeps both bandwidths equal, so 20h is exact
    let e = eta(&a, &b);
    assert!(e < 0.01, "{e}");
}

#[test]
fn overlap_is_symmetric_and_bounded() {
    let mut rng = RngStream::new(6);
    for _ in 0..10 {
        let a = gaussian(
            300,
            [rng.uniform(-2.0, 2.0), 0.0],
            rng.uniform(0.5, 2.0),
            &mut rng,
        );
        let b = gaussian(
            200,
            [0.0, rng.uniform(-2.0, 2.0)],
            rng.uniform(0.5, 2.0),
            &mut rng,
        );
        let (ga, gb) = kde_pair(&a, &b, 64).unwrap();
        let ab = overlap_index(&ga, &gb).unwrap();
        assert_eq!(ab, overlap_index(&gb, &ga).unwrap());
        assert!((0.0..=1.0).contains(&ab));
        assert!((ga.mass() - 1.0).abs() <= 1e-3 && (gb.mass() - 1.0).abs() <= 1e-3);
    }
}

#[test]
fn rigid_motions_leave_overlap_unchanged() {
    let mut rng = RngStream::new(7);
    let a = gaussian(1500, [0.0, 0.0], 1.0, &mut rng);
    let b = gaussian(1500, [1.5, 0.5], 0.8, &mut rng);
    let base = eta(&a, &b);
    let motions: [fn([f64; 2]) -> [f64; 2]; 4] = [
        |p| [p[0] + 7.25, p[1] - 3.5],
        |p| [-p[1], p[0]],
        |p| [-p[0], -p[1]],
        |p| [p[1] + 1.0, -p[0] + 2.0],
    ];
    for (k, m) in motions.iter().enumerate() {
        let ta: Vec<[f64; 2]> = a.iter().map(|&p| m(p)).collect();
        let tb: Vec<[f64; 2]> = b.iter().map(|&p| m(p)).collect();
        let moved = eta(&ta, &tb);
        assert!(
            (moved - base).abs() <= 1e-3,
            "motion {k}: {moved} vs {base}"
        );
    }
}

#[test]
fn half_subsample_is_stable() {
    let mut rng = RngStream::new(8);
    let reference = gaussian(2000, [0.0, 0.0], 1.0, &mut rng);
    let other = gaussian(2000, [1.0, 0.0], 1.2, &mut rng);
    let full = eta(&reference, &other);
    let mut idx: Vec<usize> = (0..other.len()).collect();
    rng.shuffle(&mut idx);
    let half: Vec<[f64; 2]> = idx[..other.len() / 2].iter().map(|&i| other[i]).collect();
    let sub = eta(&reference, &half);
    assert!((sub - full).abs() < 0.05, "{sub} vs {full}");
}

#[test]
fn kde_is_reproducible() {
    let mut rng = RngStream::new(9);
    let a = gaussian(500, [0.0, 0.0], 1.0, &mut rng);
    let b = gaussian(500, [0.5, 0.5], 1.0, &mut rng);
    let first = kde_pair(&a, &b, 128).unwrap();
    let second = kde_pair(&a, &b, 128).unwrap();
    assert_eq!(first.0.density, second.0.density);
    assert_eq!(first.1.density, second.1.density);
}

#[test]
fn identical_embedding_sets_through_pca() {
    let mut rng = RngStream::new(10);
    let points: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..6).map(|d| rng.normal(0.0, 1.0 + d as f64)).collect())
        .collect();
    let reference = EmbeddingSet::new(points.clone(), "train").unwrap();
    let other = EmbeddingSet::new(points, "test").unwrap();
    let report = analyze_embeddings(&reference, &other, 128).unwrap();
    assert!(report.eta >= 0.99);
    assert_eq!(report.fitted_on, "train");
    assert_eq!(report.other_tag, "test");
}

#[test]
fn external_reduction_csv_feeds_the_same_pipeline() {
    let mut rng = RngStream::new(11);
    let a = gaussian(500, [0.0, 0.0], 1.0, &mut rng);
    let b = gaussian(500, [2.0, 0.0], 1.0, &mut rng);
    let mut text = String::from("source_tag,x,y\n");
    for p in &a {
        text.push_str(&format!("umap_train,{},{}\n", p[0], p[1]));
    }
    for p in &b {
        text.push_str(&format!("umap_test,{},{}\n", p[0], p[1]));
    }
    let sets = read_reduced_csv(text.as_bytes()).unwrap();
    assert_eq!(sets.len(), 2);
    let report = analyze_reduced(&sets[0], &sets[1], 128).unwrap();
    let direct = {
        let (ga, gb) = kde_pair(&a, &b, 128).unwrap();
        overlap_index(&ga, &gb).unwrap()
    };
    assert!((report.eta - direct).abs() <= 1e-12);
    assert_eq!(report.fitted_on, "umap_train");
}

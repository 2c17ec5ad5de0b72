//! Brute-force confusion-count and pair-count oracles for the metrics.

use ecg_ssl::metrics::{auc, macro_f1, micro_f1, per_class_f1, PredictionBatch};
use ecg_ssl::rng::RngStream;

pub const TOLERANCE: f64 = 1e-12;

/// Random batch; half of the batches draw scores from a coarse set so ties
/// and scores equal to the threshold occur often.
pub fn random_batch(rng: &mut RngStream) -> (PredictionBatch, f64) {
    let n = 1 + rng.below(60);
    let k = 1 + rng.below(6);
    let coarse = rng.below(2) == 0;
    let positive_rate = rng.uniform(0.0, 1.0);
    let mut scores = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        scores.push(
            (0..k)
                .map(|_| {
                    if coarse {
                        rng.below(5) as f64 / 4.0
                    } else {
                        rng.uniform(0.0, 1.0)
                    }
                })
                .collect::<Vec<f64>>(),
        );
        targets.push(
            (0..k)
                .map(|_| u8::from(rng.uniform(0.0, 1.0) < positive_rate))
                .collect::<Vec<u8>>(),
        );
    }
    let threshold = if coarse {
        rng.below(5) as f64 / 4.0
    } else {
        rng.uniform(0.0, 1.0)
    };
    let names = (0..k).map(|c| format!("class{c}")).collect();
    (
        PredictionBatch::new(scores, targets, names).unwrap(),
        threshold,
    )
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn counts(b: &PredictionBatch, threshold: f64, c: usize) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..b.n_samples() {
        let predicted = b.scores[i][c] >= threshold;
        let actual = b.targets[i][c] == 1;
        if predicted && actual {
            tp += 1;
        } else if predicted {
            fp += 1;
        } else if actual {
            fn_ += 1;
        }
    }
    (tp, fp, fn_)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half, over all pairs.
fn pair_count_auc(b: &PredictionBatch, c: usize) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..b.n_samples() {
        for j in 0..b.n_samples() {
            if b.targets[i][c] == 1 && b.targets[j][c] == 0 {
                pairs += 1;
                let (p, q) = (b.scores[i][c], b.scores[j][c]);
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE
}

/// Counts of the degenerate branches a batch exercised.
#[derive(Debug, Default, Clone, Copy)]
pub struct Coverage {
    pub undefined_auc: usize,
    pub tied_classes: usize,
}

/// Compares every metric on `b` with the oracles.
pub fn check_batch(b: &PredictionBatch, threshold: f64) -> Result<Coverage, String> {
    let k = b.n_classes();
    let mut cov = Coverage::default();
    let oracle_f1: Vec<f64> = (0..k)
        .map(|c| {
            let (tp, fp, fn_) = counts(b, threshold, c);
            f1_from_counts(tp, fp, fn_)
        })
        .collect();
    let got = per_class_f1(b, threshold).map_err(|e| e.to_string())?;
    for c in 0..k {
        if !close(got[c], oracle_f1[c]) {
            return Err(format!("class {c} f1 {} vs {}", got[c], oracle_f1[c]));
        }
    }
    let oracle_macro = oracle_f1.iter().sum::<f64>() / k as f64;
    let got_macro = macro_f1(b, threshold).map_err(|e| e.to_string())?;
    if !close(got_macro, oracle_macro) {
        return Err(format!("macro f1 {got_macro} vs {oracle_macro}"));
    }
    let (tp, fp, fn_) = (0..k)
        .map(|c| counts(b, threshold, c))
        .fold((0, 0, 0), |a, x| (a.0 + x.0, a.1 + x.1, a.2 + x.2));
    let got_micro = micro_f1(b, threshold).map_err(|e| e.to_string())?;
    if !close(got_micro, f1_from_counts(tp, fp, fn_)) {
        return Err(format!(
            "micro f1 {got_micro} vs {}",
            f1_from_counts(tp, fp, fn_)
        ));
    }

    let report = auc(b);
    let oracle_auc: Vec<Option<f64>> = (0..k).map(|c| pair_count_auc(b, c)).collect();
    for c in 0..k {
        match (report.per_class[c], oracle_auc[c]) {
            (Some(a), Some(o)) if close(a, o) => {}
            (None, None) => cov.undefined_auc += 1,
            (a, o) => return Err(format!("class {c} auc {a:?} vs {o:?}")),
        }
    }
    let defined: Vec<f64> = oracle_auc.iter().flatten().copied().collect();
    let macro_ok = match report.macro_auc {
        Some(m) => {
            !defined.is_empty() && close(m, defined.iter().sum::<f64>() / defined.len() as f64)
        }
        None => defined.is_empty(),
    };
    if !macro_ok {
        return Err(format!("macro auc {:?}", report.macro_auc));
    }
    let expected_skipped: Vec<usize> = (0..k).filter(|&c| oracle_auc[c].is_none()).collect();
    if report.skipped != expected_skipped {
        return Err(format!(
            "skipped {:?} vs {expected_skipped:?}",
            report.skipped
        ));
    }
    cov.tied_classes = (0..k)
        .filter(|&c| {
            let mut v: Vec<f64> = b.scores.iter().map(|r| r[c]).collect();
            v.sort_by(f64::total_cmp);
            v.windows(2).any(|w| w[0] == w[1])
        })
        .count();
    Ok(cov)
}

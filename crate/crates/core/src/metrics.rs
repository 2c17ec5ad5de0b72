//! Multi-label classification metrics: per-class, macro and micro F1 and
//! rank-based AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class scores and binary targets, row-major `n_samples x n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub scores: Vec<Vec<f64>>,
    pub targets: Vec<Vec<u8>>,
    pub class_names: Vec<String>,
}

impl PredictionBatch {
    pub fn new(
        scores: Vec<Vec<f64>>,
        targets: Vec<Vec<u8>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let b = Self {
            scores,
            targets,
            class_names,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if self.scores.len() != self.targets.len() {
            return Err(Error::shape(format!(
                "{} score rows vs {} target rows",
                self.scores.len(),
                self.targets.len()
            )));
        }
        for (s, t) in self.scores.iter().zip(&self.targets) {
            if s.len() != k || t.len() != k {
                return Err(Error::shape(format!("row width differs from {k} classes")));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prediction scores".into()));
            }
            if t.iter().any(|&v| v > 1) {
                return Err(Error::invalid("targets must be 0 or 1"));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.scores.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Thresholded confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, or 1 when all three are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// A class counts as predicted when its score is `>= threshold`.
pub fn confusion(pred: &PredictionBatch, threshold: f64) -> Vec<Confusion> {
    let mut out = vec![Confusion::default(); pred.n_classes()];
    for (s, t) in pred.scores.iter().zip(&pred.targets) {
        for (c, conf) in out.iter_mut().enumerate() {
            match (s[c] >= threshold, t[c] == 1) {
                (true, true) => conf.tp += 1,
                (true, false) => conf.fp += 1,
                (false, true) => conf.fn_ += 1,
                (false, false) => conf.tn += 1,
            }
        }
    }
    out
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )))
    }
}

pub fn per_class_f1(pred: &PredictionBatch, threshold: f64) -> Result<Vec<f64>> {
    check_threshold(threshold)?;
    Ok(confusion(pred, threshold)
        .iter()
        .map(Confusion::f1)
        .collect())
}

/// Mean of [`per_class_f1`], summed in class order.
pub fn macro_f1(pred: &PredictionBatch, threshold: f64) -> Result<f64> {
    let f1 = per_class_f1(pred, threshold)?;
    if f1.is_empty() {
        return Err(Error::invalid("no classes"));
    }
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

/// F1 over TP/FP/FN pooled across classes.
pub fn micro_f1(pred: &PredictionBatch, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let pooled = confusion(pred, threshold)
        .iter()
        .fold(Confusion::default(), |a, c| Confusion {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
            tn: a.tn + c.tn,
        });
    Ok(pooled.f1())
}

/// Per-class AUC; `None` for classes lacking a positive or a negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined AUC, `None` if there are none.
    pub macro_auc: Option<f64>,
    /// Indices of classes skipped as degenerate.
    pub skipped: Vec<usize>,
}

/// Mann-Whitney statistic for one class: the fraction of (positive, negative)
/// pairs where the positive scores higher, ties counting one half. Uses
/// midranks, so cost is `O(n log n)`.
pub fn binary_auc(scores: &[f64], targets: &[u8]) -> Option<f64> {
    let n_pos = targets.iter().filter(|&&t| t == 1).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| targets[k] == 1).count();
        pos_rank_sum += mid * pos_in_tie as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn auc(pred: &PredictionBatch) -> AucReport {
    let per_class: Vec<Option<f64>> = (0..pred.n_classes())
        .map(|c| {
            let s: Vec<f64> = pred.scores.iter().map(|r| r[c]).collect();
            let t: Vec<u8> = pred.targets.iter().map(|r| r[c]).collect();
            binary_auc(&s, &t)
        })
        .collect();
    let skipped = per_class
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(c, _)| c)
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    AucReport {
        per_class,
        macro_auc,
        skipped,
    }
}

/// Every metric at one threshold, as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub threshold: f64,
    pub class_names: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub auc: AucReport,
}

pub fn summarize(pred: &PredictionBatch, threshold: f64) -> Result<MetricSummary> {
    pred.validate()?;
    Ok(MetricSummary {
        threshold,
        class_names: pred.class_names.clone(),
        per_class_f1: per_class_f1(pred, threshold)?,
        macro_f1: macro_f1(pred, threshold)?,
        micro_f1: micro_f1(pred, threshold)?,
        auc: auc(pred),
    })
}

impl MetricSummary {
    /// `(class, metric, value)` rows; the aggregate rows use class `all`.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for (c, name) in self.class_names.iter().enumerate() {
            rows.push((name.clone(), "f1".to_string(), self.per_class_f1[c]));
            if let Some(a) = self.auc.per_class[c] {
                rows.push((name.clone(), "auc".to_string(), a));
            }
        }
        rows.push(("all".into(), "macro_f1".into(), self.macro_f1));
        rows.push(("all".into(), "micro_f1".into(), self.micro_f1));
        if let Some(a) = self.auc.macro_auc {
            rows.push(("all".into(), "macro_auc".into(), a));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(scores: Vec<Vec<f64>>, targets: Vec<Vec<u8>>) -> PredictionBatch {
        let k = targets[0].len();
        PredictionBatch::new(scores, targets, (0..k).map(|c| format!("c{c}")).collect()).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let p = batch(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1, 0], vec![0, 1]],
        );
        assert_eq!(per_class_f1(&p, 0.5).unwrap(), vec![1.0, 1.0]);
        assert_eq!(macro_f1(&p, 0.5).unwrap(), 1.0);
        assert_eq!(micro_f1(&p, 0.5).unwrap(), 1.0);
        assert_eq!(auc(&p).per_class, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn zero_support_class_scores_one() {
        let p = batch(vec![vec![0.9, 0.1]], vec![vec![1, 0]]);
        assert_eq!(per_class_f1(&p, 0.5).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn hand_confusion_counts() {
        // class 0: TP=1 FP=1 FN=0; class 1: TP=2 FP=0 FN=2
        let p = batch(
            vec![
                vec![0.9, 0.9],
                vec![0.9, 0.9],
                vec![0.1, 0.1],
                vec![0.1, 0.1],
            ],
            vec![vec![1, 1], vec![0, 1], vec![0, 1], vec![0, 1]],
        );
        let f = per_class_f1(&p, 0.5).unwrap();
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15 && (f[1] - 2.0 / 3.0).abs() < 1e-15);
        // pooled TP=3 FP=1 FN=2
        assert!((micro_f1(&p, 0.5).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn macro_of_one_and_zero() {
        let p = batch(vec![vec![0.9, 0.9]], vec![vec![1, 0]]);
        assert_eq!(macro_f1(&p, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            binary_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]),
            Some(0.75)
        );
        assert_eq!(binary_auc(&[0.3; 5], &[0, 1, 0, 1, 1]), Some(0.5));
        assert_eq!(binary_auc(&[0.3, 0.2], &[1, 1]), None);
        let p = batch(
            vec![vec![0.2, 0.1], vec![0.7, 0.9]],
            vec![vec![0, 1], vec![1, 1]],
        );
        let r = auc(&p);
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(r.macro_auc, Some(1.0));
    }

    #[test]
    fn validation() {
        assert!(
            PredictionBatch::new(vec![vec![f64::NAN]], vec![vec![0]], vec!["a".into()]).is_err()
        );
        assert!(PredictionBatch::new(vec![vec![0.1]], vec![vec![2]], vec!["a".into()]).is_err());
        assert!(
            PredictionBatch::new(vec![vec![0.1, 0.2]], vec![vec![0]], vec!["a".into()]).is_err()
        );
        let p = batch(vec![vec![0.5]], vec![vec![1]]);
        assert!(per_class_f1(&p, 1.5).is_err());
    }
}

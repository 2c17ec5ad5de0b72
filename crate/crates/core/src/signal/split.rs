use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EcgRecord, Window};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Segmentation parameters. Defaults: 250-sample windows without overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_len: usize,
    pub overlap: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 250,
            overlap: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
}

impl DatasetSplit {
    pub fn partitions(&self) -> [(&'static str, &[Window]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }
}

/// Cuts `record` into windows of `window_len` samples advancing by
/// `window_len - overlap`. A trailing remainder shorter than a window is dropped.
pub fn window(record: &EcgRecord, window_len: usize, overlap: usize) -> Result<Vec<Window>> {
    if window_len == 0 {
        return Err(Error::invalid("window_len must be at least 1"));
    }
    if overlap >= window_len {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than window_len {window_len}"
        )));
    }
    let n = record.n_samples();
    if n < window_len {
        return Ok(Vec::new());
    }
    let hop = window_len - overlap;
    let count = (n - window_len) / hop + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * hop;
            Window {
                data: record
                    .leads
                    .iter()
                    .map(|l| l[start..start + window_len].to_vec())
                    .collect(),
                source_subject: record.subject_id.clone(),
                labels: record.labels.clone(),
            }
        })
        .collect())
}

/// Partitions records by subject, then windows each partition.
///
/// Subjects are sorted, shuffled with `seed`, and allotted by largest
/// remainder so counts match `fractions` within one subject. Every partition
/// with a positive fraction receives at least one subject.
pub fn split_by_subject(
    records: &[EcgRecord],
    fractions: (f64, f64, f64),
    seed: u64,
    windowing: &WindowConfig,
) -> Result<DatasetSplit> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::invalid("split fractions must be nonnegative"));
    }
    if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must sum to 1, got {}",
            fr.iter().sum::<f64>()
        )));
    }
    let mut subjects: Vec<&str> = records
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let wanted = fr.iter().filter(|&&f| f > 0.0).count();
    if subjects.len() < wanted.max(3) {
        return Err(Error::invalid(format!(
            "need at least 3 subjects to split, got {}",
            subjects.len()
        )));
    }
    let counts = allot(subjects.len(), &fr);
    RngStream::new(seed).shuffle(&mut subjects);

    let mut bounds = [0usize; 4];
    for i in 0..3 {
        bounds[i + 1] = bounds[i] + counts[i];
    }
    let part_of = |subject: &str| -> usize {
        let pos = subjects.iter().position(|s| *s == subject).unwrap();
        (0..3).find(|&p| pos < bounds[p + 1]).unwrap()
    };

    let mut split = DatasetSplit::default();
    for record in records {
        let windows = window(record, windowing.window_len, windowing.overlap)?;
        match part_of(&record.subject_id) {
            0 => split.train.extend(windows),
            1 => split.validation.extend(windows),
            _ => split.test.extend(windows),
        }
    }
    Ok(split)
}

fn allot(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    // no positive-fraction partition may be left empty
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3)
                .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
                .unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

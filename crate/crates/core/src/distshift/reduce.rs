//! Embedding sets and the PCA reducer to the plane.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{embed, EncoderConfig, ModelParams};
use crate::signal::Window;

/// Encoder outputs for one dataset or partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub points: Vec<Vec<f64>>,
    pub source_tag: String,
}

impl EmbeddingSet {
    pub fn new(points: Vec<Vec<f64>>, source_tag: impl Into<String>) -> Result<Self> {
        let set = Self {
            points,
            source_tag: source_tag.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid(format!(
                "embedding set '{}' needs at least 2 points, has {}",
                self.source_tag,
                self.points.len()
            )));
        }
        let d = self.points[0].len();
        if d == 0 {
            return Err(Error::shape("embedding dimension is zero"));
        }
        for p in &self.points {
            if p.len() != d {
                return Err(Error::shape(format!(
                    "embedding rows of width {} and {d}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "embedding set '{}'",
                    self.source_tag
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Pre-projection encoder outputs `h` for every window.
pub fn extract_embeddings(
    params: &ModelParams,
    config: &EncoderConfig,
    windows: &[Window],
    source_tag: &str,
) -> Result<EmbeddingSet> {
    EmbeddingSet::new(embed(params, config, windows)?, source_tag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducerKind {
    Pca,
    External,
}

/// Points in a shared 2-D coordinate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedEmbedding {
    pub points: Vec<[f64; 2]>,
    pub reducer: ReducerKind,
    pub source_tag: String,
}

/// Two leading principal axes of a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub fitted_on: String,
}

impl PcaModel {
    /// Fits on `reference` only. Component signs are fixed so that the entry
    /// of largest magnitude is positive, making the frame deterministic.
    pub fn fit(reference: &EmbeddingSet) -> Result<Self> {
        reference.validate()?;
        let (n, d) = (reference.n(), reference.dim());
        if n < 3 {
            return Err(Error::invalid(format!(
                "PCA reference needs at least 3 points, has {n}"
            )));
        }
        let mut mean = vec![0.0; d];
        for p in &reference.points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in &reference.points {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let top = eig.eigenvalues[order[0]];
        if !(top > 0.0) {
            return Err(Error::invalid(format!(
                "reference set '{}' has zero variance in every direction",
                reference.source_tag
            )));
        }
        let axis = |k: usize| -> (Vec<f64>, f64) {
            if k >= d {
                return (vec![0.0; d], 0.0);
            }
            let col = eig.eigenvectors.column(order[k]);
            let mut v: Vec<f64> = col.iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (v, eig.eigenvalues[order[k]].max(0.0))
        };
        let (c0, v0) = axis(0);
        let (c1, v1) = axis(1);
        Ok(Self {
            mean,
            components: [c0, c1],
            explained_variance: [v0, v1],
            fitted_on: reference.source_tag.clone(),
        })
    }

    pub fn transform(&self, set: &EmbeddingSet) -> Result<ReducedEmbedding> {
        set.validate()?;
        if set.dim() != self.mean.len() {
            return Err(Error::shape(format!(
                "PCA fitted on dimension {}, set '{}' has {}",
                self.mean.len(),
                set.source_tag,
                set.dim()
            )));
        }
        let points = set
            .points
            .iter()
            .map(|p| {
                let mut out = [0.0; 2];
                for (o, comp) in out.iter_mut().zip(&self.components) {
                    *o = p
                        .iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((v, m), c)| (v - m) * c)
                        .sum();
                }
                out
            })
            .collect();
        Ok(ReducedEmbedding {
            points,
            reducer: ReducerKind::Pca,
            source_tag: set.source_tag.clone(),
        })
    }
}

/// Fits PCA on `reference` and projects it followed by every set in
/// `others` into the same frame.
pub fn fit_reduce(
    reference: &EmbeddingSet,
    others: &[EmbeddingSet],
) -> Result<(PcaModel, Vec<ReducedEmbedding>)> {
    let model = PcaModel::fit(reference)?;
    let mut out = vec![model.transform(reference)?];
    for set in others {
        out.push(model.transform(set)?);
    }
    Ok((model, out))
}

//! Distribution-shift analysis: embed two datasets with one encoder, project
//! both into a plane fitted on the reference set, and measure how much their
//! kernel density estimates overlap.

mod kde;
mod reduce;

pub use kde::{
    axis_overlap, kde_2d, kde_on_grid, kde_pair, overlap_index, scott_bandwidth, shared_extent,
    DensityGrid, GridExtent, BANDWIDTH_FLOOR, DEFAULT_RESOLUTION, GRID_PADDING, MIN_RESOLUTION,
};
pub use reduce::{
    extract_embeddings, fit_reduce, EmbeddingSet, PcaModel, ReducedEmbedding, ReducerKind,
};

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, ModelParams};
use crate::signal::Window;

/// Overlap between a reference set and another set in a shared plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// 2-D overlap index in `[0, 1]`.
    pub eta: f64,
    /// Overlap of the x and y marginals.
    pub axis_eta: [f64; 2],
    pub grids: [DensityGrid; 2],
    pub reducer: ReducerKind,
    /// Tag of the set the reducer was fitted on.
    pub fitted_on: String,
    pub other_tag: String,
    pub n_points: [usize; 2],
}

/// [`OverlapReport`] without the density grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub eta: f64,
    pub axis_eta: [f64; 2],
    pub reducer: ReducerKind,
    pub fitted_on: String,
    pub other_tag: String,
    pub n_points: [usize; 2],
    pub resolution: usize,
    pub bandwidths: [[f64; 2]; 2],
    pub bandwidth_floored: [[bool; 2]; 2],
}

impl OverlapReport {
    pub fn summary(&self) -> OverlapSummary {
        OverlapSummary {
            eta: self.eta,
            axis_eta: self.axis_eta,
            reducer: self.reducer,
            fitted_on: self.fitted_on.clone(),
            other_tag: self.other_tag.clone(),
            n_points: self.n_points,
            resolution: self.grids[0].resolution(),
            bandwidths: [self.grids[0].bandwidth, self.grids[1].bandwidth],
            bandwidth_floored: [
                self.grids[0].bandwidth_floored,
                self.grids[1].bandwidth_floored,
            ],
        }
    }
}

/// Overlap of two sets that already live in the same plane.
pub fn analyze_reduced(
    reference: &ReducedEmbedding,
    other: &ReducedEmbedding,
    resolution: usize,
) -> Result<OverlapReport> {
    let (g1, g2) = kde_pair(&reference.points, &other.points, resolution)?;
    Ok(OverlapReport {
        eta: overlap_index(&g1, &g2)?,
        axis_eta: axis_overlap(&g1, &g2)?,
        grids: [g1, g2],
        reducer: reference.reducer,
        fitted_on: reference.source_tag.clone(),
        other_tag: other.source_tag.clone(),
        n_points: [reference.points.len(), other.points.len()],
    })
}

/// Fits PCA on `reference`, projects both sets and measures their overlap.
pub fn analyze_embeddings(
    reference: &EmbeddingSet,
    other: &EmbeddingSet,
    resolution: usize,
) -> Result<OverlapReport> {
    let (_, reduced) = fit_reduce(reference, std::slice::from_ref(other))?;
    analyze_reduced(&reduced[0], &reduced[1], resolution)
}

/// Embeds both window sets with `params` and measures their overlap.
pub fn analyze_pair(
    params: &ModelParams,
    config: &EncoderConfig,
    reference: &[Window],
    other: &[Window],
    resolution: usize,
) -> Result<OverlapReport> {
    if reference.is_empty() || other.is_empty() {
        return Err(Error::invalid(
            "overlap analysis needs two nonempty window sets",
        ));
    }
    let r = extract_embeddings(params, config, reference, "reference")?;
    let o = extract_embeddings(params, config, other, "other")?;
    analyze_embeddings(&r, &o, resolution)
}

#[derive(Debug, Deserialize)]
struct ReducedRow {
    source_tag: String,
    x: f64,
    y: f64,
}

/// Reads externally reduced points from CSV with header `source_tag,x,y`.
/// Sets are returned in order of first appearance of their tag.
pub fn read_reduced_csv<R: Read>(reader: R) -> Result<Vec<ReducedEmbedding>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["source_tag", "x", "y"] {
        return Err(Error::format(format!(
            "reduced-embedding CSV header must be source_tag,x,y, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut sets: Vec<ReducedEmbedding> = Vec::new();
    for row in rdr.deserialize() {
        let row: ReducedRow = row?;
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(Error::NonFinite(format!(
                "reduced point in set '{}'",
                row.source_tag
            )));
        }
        match sets.iter_mut().find(|s| s.source_tag == row.source_tag) {
            Some(s) => s.points.push([row.x, row.y]),
            None => sets.push(ReducedEmbedding {
                points: vec![[row.x, row.y]],
                reducer: ReducerKind::External,
                source_tag: row.source_tag,
            }),
        }
    }
    Ok(sets)
}

//! Gaussian product-kernel density estimates on a regular 2-D grid and the
//! overlap index between two such densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 256;
pub const MIN_RESOLUTION: usize = 16;
/// Padding around the data, in bandwidths.
pub const GRID_PADDING: f64 = 3.0;
/// Relative floor for a zero-variance axis bandwidth.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Rectangle covered by a grid. Cell `(i, j)` is centered at
/// `min + (index + 0.5) * step` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridExtent {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub resolution: usize,
}

impl GridExtent {
    pub fn step(&self) -> [f64; 2] {
        let r = self.resolution as f64;
        [
            (self.max[0] - self.min[0]) / r,
            (self.max[1] - self.min[1]) / r,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        let s = self.step();
        s[0] * s[1]
    }

    pub fn centers(&self, axis: usize) -> Vec<f64> {
        let step = self.step()[axis];
        (0..self.resolution)
            .map(|i| self.min[axis] + (i as f64 + 0.5) * step)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "grid resolution {} below {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        for a in 0..2 {
            if !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite()
            {
                return Err(Error::invalid(format!("degenerate grid axis {a}")));
            }
        }
        Ok(())
    }
}

/// Scott's-rule bandwidth per axis, `n^(-1/6) * std`. An axis with zero
/// spread gets `BANDWIDTH_FLOOR * range`, where `range` is the largest axis
/// range of the points (or 1 when every point coincides), and is flagged.
pub fn scott_bandwidth(points: &[[f64; 2]]) -> Result<([f64; 2], [bool; 2])> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "KDE needs at least 2 points, has {n}"
        )));
    }
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::NonFinite("KDE input points".into()));
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let mut range = 0.0f64;
    let mut std = [0.0; 2];
    for a in 0..2 {
        let mean = points.iter().map(|p| p[a]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[a] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        std[a] = var.sqrt();
        let (lo, hi) = bounds(points, a);
        range = range.max(hi - lo);
    }
    let floor = BANDWIDTH_FLOOR * if range > 0.0 { range } else { 1.0 };
    let mut bw = [0.0; 2];
    let mut floored = [false; 2];
    for a in 0..2 {
        bw[a] = factor * std[a];
        if !(bw[a] > floor) {
            bw[a] = floor;
            floored[a] = true;
        }
    }
    Ok((bw, floored))
}

fn bounds(points: &[[f64; 2]], axis: usize) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[axis]), hi.max(p[axis]))
        })
}

/// Normalized density on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub extent: GridExtent,
    /// Row-major, `density[j * resolution + i]` at x-cell `i`, y-cell `j`.
    pub density: Vec<f64>,
    pub bandwidth: [f64; 2],
    /// Axes whose bandwidth hit the zero-variance floor.
    pub bandwidth_floored: [bool; 2],
}

impl DensityGrid {
    pub fn resolution(&self) -> usize {
        self.extent.resolution
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.density[j * self.extent.resolution + i]
    }

    /// `sum(density) * cell_area`; 1 up to rounding after normalization.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.extent.cell_area()
    }

    /// 1-D marginal density along `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let r = self.extent.resolution;
        let step = self.extent.step();
        let other = step[1 - axis];
        (0..r)
            .map(|k| {
                let s: f64 = if axis == 0 {
                    (0..r).map(|j| self.density[j * r + k]).sum()
                } else {
                    self.density[k * r..(k + 1) * r].iter().sum()
                };
                s * other
            })
            .collect()
    }

    /// Cell index of the density maximum, first in row-major order on ties.
    pub fn peak(&self) -> (usize, usize) {
        let r = self.extent.resolution;
        let mut best = 0;
        for (k, &v) in self.density.iter().enumerate() {
            if v > self.density[best] {
                best = k;
            }
        }
        (best % r, best / r)
    }

    /// `(x, y, density)` rows in row-major order.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let xs = self.extent.centers(0);
        let ys = self.extent.centers(1);
        let mut out = Vec::with_capacity(self.density.len());
        for (j, y) in ys.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                out.push((*x, *y, self.at(i, j)));
            }
        }
        out
    }
}

/// Grid covering the joint bounds of all sets, padded by `GRID_PADDING`
/// times the largest bandwidth of any set on each axis.
pub fn shared_extent(sets: &[&[[f64; 2]]], resolution: usize) -> Result<GridExtent> {
    if sets.is_empty() {
        return Err(Error::invalid("no point sets"));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    let mut pad = [0.0f64; 2];
    for pts in sets {
        let (bw, _) = scott_bandwidth(pts)?;
        for a in 0..2 {
            let (lo, hi) = bounds(pts, a);
            min[a] = min[a].min(lo);
            max[a] = max[a].max(hi);
            pad[a] = pad[a].max(bw[a]);
        }
    }
    let extent = GridExtent {
        min: [
            min[0] - GRID_PADDING * pad[0],
            min[1] - GRID_PADDING * pad[1],
        ],
        max: [
            max[0] + GRID_PADDING * pad[0],
            max[1] + GRID_PADDING * pad[1],
        ],
        resolution,
    };
    extent.validate()?;
    Ok(extent)
}

/// KDE of `points` evaluated on `extent`, normalized so the grid integrates
/// to one. Each row of the grid sums the points in input order.
pub fn kde_on_grid(points: &[[f64; 2]], extent: GridExtent) -> Result<DensityGrid> {
    extent.validate()?;
    let (bw, floored) = scott_bandwidth(points)?;
    let r = extent.resolution;
    let xs = extent.centers(0);
    let ys = extent.centers(1);
    let kernel = |centers: &[f64], axis: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() * r);
        for p in points {
            out.extend(centers.iter().map(|c| {
                let u = (c - p[axis]) / bw[axis];
                (-0.5 * u * u).exp()
            }));
        }
        out
    };
    let kx = kernel(&xs, 0);
    let ky = kernel(&ys, 1);
    let mut density = vec![0.0; r * r];
    density.par_chunks_mut(r).enumerate().for_each(|(j, row)| {
        for k in 0..points.len() {
            let wy = ky[k * r + j];
            if wy == 0.0 {
                continue;
            }
            for (d, &wx) in row.iter_mut().zip(&kx[k * r..(k + 1) * r]) {
                *d += wy * wx;
            }
        }
    });
    let total = density.iter().sum::<f64>() * extent.cell_area();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFinite("KDE mass vanished on the grid".into()));
    }
    density.iter_mut().for_each(|d| *d /= total);
    Ok(DensityGrid {
        extent,
        density,
        bandwidth: bw,
        bandwidth_floored: floored,
    })
}

/// KDE of one point set on a grid spanning its own padded bounds.
pub fn kde_2d(points: &[[f64; 2]], resolution: usize) -> Result<DensityGrid> {
    let extent = shared_extent(&[points], resolution)?;
    kde_on_grid(points, extent)
}

/// KDEs of two point sets on their shared grid.
pub fn kde_pair(
    a: &[[f64; 2]],
    b: &[[f64; 2]],
    resolution: usize,
) -> Result<(DensityGrid, DensityGrid)> {
    let extent = shared_extent(&[a, b], resolution)?;
    Ok((kde_on_grid(a, extent)?, kde_on_grid(b, extent)?))
}

fn check_same_grid(g1: &DensityGrid, g2: &DensityGrid) -> Result<()> {
    if g1.extent != g2.extent || g1.density.len() != g2.density.len() {
        return Err(Error::shape("density grids differ in extent or resolution"));
    }
    Ok(())
}

/// `sum(min(f, g)) * cell_area`, clamped to `[0, 1]`.
pub fn overlap_index(g1: &DensityGrid, g2: &DensityGrid) -> Result<f64> {
    check_same_grid(g1, g2)?;
    let s: f64 = g1
        .density
        .iter()
        .zip(&g2.density)
        .map(|(a, b)| a.min(*b))
        .sum();
    Ok((s * g1.extent.cell_area()).clamp(0.0, 1.0))
}

/// Overlap of the 1-D marginals along x and along y.
pub fn axis_overlap(g1: &DensityGrid, g2: &DensityGrid) -> Result<[f64; 2]> {
    check_same_grid(g1, g2)?;
    let step = g1.extent.step();
    let mut out = [0.0; 2];
    for (a, o) in out.iter_mut().enumerate() {
        let m1 = g1.marginal(a);
        let m2 = g2.marginal(a);
        let s: f64 = m1.iter().zip(&m2).map(|(x, y)| x.min(*y)).sum();
        *o = (s * step[a]).clamp(0.0, 1.0);
    }
    Ok(out)
}

//! Outlier filtering of SfM points and robust scene bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Axis};
use crate::spatial::PointGrid;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsePointCloud {
    pub points: Vec<[f64; 3]>,
}

impl SparsePointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Input("point cloud contains non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub aabb: Aabb,
    pub up_axis: Axis,
    pub height: f64,
}

impl SceneBounds {
    pub fn new(aabb: Aabb, up_axis: Axis) -> Result<Self> {
        let height = aabb.extent()[up_axis.index()];
        if !(height > 0.0) {
            return Err(Error::Precondition(format!("scene height along {up_axis:?} must be positive")));
        }
        Ok(Self { aabb, up_axis, height })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateParams {
    pub stat_k: usize,
    pub stat_ratio: f64,
    pub radius: f64,
    pub min_neighbors: usize,
    pub p_low: f64,
    pub p_high: f64,
    pub pad: f64,
    pub up_axis: Axis,
}

impl Default for CalibrateParams {
    fn default() -> Self {
        Self {
            stat_k: 20,
            stat_ratio: 2.0,
            radius: 0.5,
            min_neighbors: 5,
            p_low: 2.0,
            p_high: 98.0,
            pad: 0.1,
            up_axis: Axis::Y,
        }
    }
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_neighbor_distances(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let grid = PointGrid::new(points);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nn = grid.knn(&points[i], k, Some(i));
            nn.iter().map(|e| e.0.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

/// Keep points whose mean k-NN distance is within `std_ratio` standard
/// deviations of the cloud-wide mean.
pub fn statistical_outlier_filter(cloud: &SparsePointCloud, k: usize, std_ratio: f64) -> Result<SparsePointCloud> {
    if k == 0 || cloud.len() <= k {
        return Err(Error::Precondition(format!(
            "statistical filter needs more than k={k} points, got {}",
            cloud.len()
        )));
    }
    let d = mean_neighbor_distances(&cloud.points, k);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let thresh = mean + std_ratio * var.sqrt();
    let points = cloud
        .points
        .iter()
        .zip(&d)
        .filter(|(_, &di)| di <= thresh)
        .map(|(p, _)| *p)
        .collect();
    Ok(SparsePointCloud { points })
}

/// Keep points with at least `min_neighbors` other points within `radius`.
pub fn radius_outlier_filter(cloud: &SparsePointCloud, radius: f64, min_neighbors: usize) -> Result<SparsePointCloud> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    if min_neighbors == 0 {
        return Ok(cloud.clone());
    }
    let grid = PointGrid::with_cell(&cloud.points, Some(radius));
    let keep: Vec<bool> = (0..cloud.len())
        .into_par_iter()
        .map(|i| grid.count_within(&cloud.points[i], radius, Some(i)) >= min_neighbors)
        .collect();
    let points = cloud
        .points
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| *p)
        .collect();
    Ok(SparsePointCloud { points })
}

/// Percentile of sorted values with linear interpolation between ranks.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn estimate_bounds(cloud: &SparsePointCloud, p_low: f64, p_high: f64, pad: f64, up_axis: Axis) -> Result<SceneBounds> {
    if cloud.is_empty() {
        return Err(Error::Precondition("cannot estimate bounds of an empty cloud".into()));
    }
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low >= p_high {
        return Err(Error::Parameter(format!("need 0 <= p_low < p_high <= 100, got {p_low}, {p_high}")));
    }
    if !(pad >= 0.0) {
        return Err(Error::Parameter(format!("pad must be non-negative, got {pad}")));
    }
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let mut v: Vec<f64> = cloud.points.iter().map(|p| p[a]).collect();
        v.sort_by(f64::total_cmp);
        min[a] = percentile_sorted(&v, p_low) - pad;
        max[a] = percentile_sorted(&v, p_high) + pad;
    }
    SceneBounds::new(Aabb::new(min, max)?, up_axis)
}

/// Statistical filter, radius filter, then percentile bounds.
pub fn calibrate(cloud: &SparsePointCloud, params: &CalibrateParams) -> Result<(SparsePointCloud, SceneBounds)> {
    let filtered = if cloud.len() > params.stat_k {
        statistical_outlier_filter(cloud, params.stat_k, params.stat_ratio)?
    } else {
        log::warn!("skipping statistical filter: only {} points", cloud.len());
        cloud.clone()
    };
    let filtered = radius_outlier_filter(&filtered, params.radius, params.min_neighbors)?;
    if filtered.is_empty() {
        return Err(Error::Precondition("no points survive outlier filtering".into()));
    }
    let bounds = estimate_bounds(&filtered, params.p_low, params.p_high, params.pad, params.up_axis)?;
    Ok((filtered, bounds))
}

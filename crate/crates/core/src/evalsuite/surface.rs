use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, DenseGrid, GridSpec, Vec3};
use crate::spatial::PointGrid;
use crate::tensor_io::MeshData;

pub const DEFAULT_SAMPLES: usize = 200_000;
pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_NORMAL_CAP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub seed: u64,
}

impl SampledSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Area-weighted triangle choice, then uniform barycentric sampling.
pub fn sample_surface(mesh: &MeshData, n: usize, seed: u64) -> Result<SampledSurface> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut normals = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        let p = mesh.triangle(i);
        let c = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let l = norm(c);
        total += 0.5 * l;
        cdf.push(total);
        normals.push(if l > 0.0 { c.map(|v| v / l) } else { [0.0; 3] });
    }
    if !(total > 0.0) {
        return Err(Error::Sampling("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampledSurface { points: Vec::with_capacity(n), normals: Vec::with_capacity(n), seed };
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        // first triangle whose cumulative area exceeds r; zero-area ones are never chosen
        let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let (u1, u2) = (rng.gen::<f64>(), rng.gen::<f64>());
        let s = u1.sqrt();
        let w = [1.0 - s, s * (1.0 - u2), s * u2];
        let p = mesh.triangle(t);
        out.points.push(std::array::from_fn(|k| w[0] * p[0][k] + w[1] * p[1][k] + w[2] * p[2][k]));
        out.normals.push(normals[t]);
    }
    Ok(out)
}

/// Nearest neighbour in `b` of every point of `a`, as (distance, index).
pub fn nearest_neighbors(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<(f64, usize)> {
    let grid = PointGrid::new(b);
    a.par_iter()
        .map(|q| {
            let (d2, i) = grid.nearest(q).expect("nonempty target set");
            (d2.sqrt(), i)
        })
        .collect()
}

fn nonempty(a: &SampledSurface, b: &SampledSurface) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("empty point set".into()));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Symmetric mean nearest-neighbour distance.
pub fn chamfer(a: &SampledSurface, b: &SampledSurface) -> Result<f64> {
    nonempty(a, b)?;
    let ab = mean(nearest_neighbors(&a.points, &b.points).into_iter().map(|p| p.0));
    let ba = mean(nearest_neighbors(&b.points, &a.points).into_iter().map(|p| p.0));
    Ok(0.5 * (ab + ba))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision of `pred` against `gt` and recall of `gt` against `pred` at
/// distance `tau` (inclusive), reported as their arithmetic mean.
pub fn f_score(pred: &SampledSurface, gt: &SampledSurface, tau: f64) -> Result<FScore> {
    nonempty(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("f-score threshold must be positive, got {tau}")));
    }
    let frac = |a: &SampledSurface, b: &SampledSurface| {
        mean(nearest_neighbors(&a.points, &b.points).into_iter().map(|(d, _)| if d <= tau { 1.0 } else { 0.0 }))
    };
    let precision = frac(pred, gt);
    let recall = frac(gt, pred);
    Ok(FScore { precision, recall, f: 0.5 * (precision + recall) })
}

/// Symmetric mean of |n . n'| over nearest-neighbour pairs; pairs farther than `cap` count as 0.
pub fn normal_consistency(a: &SampledSurface, b: &SampledSurface, cap: f64) -> Result<f64> {
    nonempty(a, b)?;
    if a.normals.len() != a.len() || b.normals.len() != b.len() {
        return Err(Error::Input("surface samples lack normals".into()));
    }
    let one_way = |x: &SampledSurface, y: &SampledSurface| {
        mean(nearest_neighbors(&x.points, &y.points).into_iter().enumerate().map(|(i, (d, j))| {
            if d > cap {
                0.0
            } else {
                let (n, m) = (x.normals[i], y.normals[j]);
                (n[0] * m[0] + n[1] * m[1] + n[2] * m[2]).abs()
            }
        }))
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// Region gating 3D evaluation to observed space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservationEnvelope {
    /// Box grown about its center so each extent is scaled by `1 + inflation`.
    BboxInflate { bbox: Aabb, inflation: f64 },
    /// Points within `radius` of any occupied voxel cube.
    VoxelDilate { spec: GridSpec, coords: Vec<[u32; 3]>, radius: f64 },
}

/// Envelope prepared for containment queries.
pub struct EnvelopeTester<'a> {
    env: &'a ObservationEnvelope,
    bbox: Option<Aabb>,
    occupied: HashSet<[i64; 3]>,
}

impl ObservationEnvelope {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::BboxInflate { inflation, .. } if !(*inflation >= 0.0) => {
                Err(Error::Parameter(format!("inflation must be >= 0, got {inflation}")))
            }
            Self::VoxelDilate { radius, .. } if !(*radius >= 0.0) => {
                Err(Error::Parameter(format!("dilation radius must be >= 0, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Voxel-dilate envelope from the occupied cells of a dense grid.
    pub fn from_occupancy(grid: &DenseGrid, radius: f64) -> Self {
        let coords = grid
            .channel(0)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(l, _)| grid.spec.unlinear(l).map(|c| c as u32))
            .collect();
        Self::VoxelDilate { spec: grid.spec, coords, radius }
    }

    pub fn tester(&self) -> EnvelopeTester<'_> {
        match self {
            Self::BboxInflate { bbox, inflation } => {
                EnvelopeTester { env: self, bbox: Some(bbox.inflate(*inflation)), occupied: HashSet::new() }
            }
            Self::VoxelDilate { coords, .. } => EnvelopeTester {
                env: self,
                bbox: None,
                occupied: coords.iter().map(|c| c.map(i64::from)).collect(),
            },
        }
    }
}

impl EnvelopeTester<'_> {
    pub fn contains(&self, p: &Vec3) -> bool {
        match self.env {
            ObservationEnvelope::BboxInflate { .. } => self.bbox.as_ref().is_some_and(|b| b.contains(p)),
            ObservationEnvelope::VoxelDilate { spec, radius, .. } => {
                let vs = spec.voxel_size;
                let r = (radius / vs).ceil() as i64 + 1;
                let cell: [i64; 3] = std::array::from_fn(|k| ((p[k] - spec.origin[k]) / vs).floor() as i64);
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            let c = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
                            if !self.occupied.contains(&c) {
                                continue;
                            }
                            let d2: f64 = (0..3)
                                .map(|k| {
                                    let center = spec.origin[k] + (c[k] as f64 + 0.5) * vs;
                                    let e = ((p[k] - center).abs() - 0.5 * vs).max(0.0);
                                    e * e
                                })
                                .sum();
                            if d2 <= radius * radius {
                                return true;
                            }
                        }
                    }
                }
                false
            }
        }
    }
}

/// Drop triangles with no vertex inside the envelope; straddling triangles stay whole.
pub fn apply_envelope(mesh: &MeshData, envelope: &ObservationEnvelope) -> Result<MeshData> {
    envelope.validate()?;
    let tester = envelope.tester();
    let inside: Vec<bool> = mesh.vertices.iter().map(|v| tester.contains(&Vec3::from(v.map(f64::from)))).collect();
    let triangles: Vec<[u32; 3]> = mesh.triangles.iter().filter(|t| t.iter().any(|&v| inside[v as usize])).copied().collect();
    if triangles.len() == mesh.triangles.len() {
        return Ok(mesh.clone());
    }
    Ok(MeshData { vertices: mesh.vertices.clone(), triangles, colors: mesh.colors.clone() }.compact())
}

/// Intersection over union of two binary occupancy grids on the same lattice.
pub fn occupancy_iou(pred: &DenseGrid, gt: &DenseGrid) -> Result<f64> {
    if pred.spec.dims != gt.spec.dims {
        return Err(Error::Shape(format!("grid dims {:?} vs {:?}", pred.spec.dims, gt.spec.dims)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in pred.channel(0).iter().zip(gt.channel(0)) {
        let (a, b) = (*a > 0.5, *b > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        return Err(Error::UndefinedMetric("both occupancy grids are empty".into()));
    }
    Ok(inter as f64 / union as f64)
}

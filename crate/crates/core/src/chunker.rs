//! Overlapping cubic chunk layouts over scene bounds and per-chunk view sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::SceneBounds;
use crate::error::{Error, Result};
use crate::geometry::{frustum_intersects_aabb, Aabb, CameraView, GridSpec, Vec3};

pub const DEFAULT_EDGE_FACTOR: f64 = 1.11;
pub const DEFAULT_NEAR: f64 = 0.05;

/// Overlap between neighbouring chunks, either as a fraction of the edge or in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "unit", content = "value")]
pub enum Margin {
    Fraction(f64),
    Meters(f64),
}

impl Default for Margin {
    fn default() -> Self {
        Margin::Fraction(0.25)
    }
}

impl Margin {
    pub fn fraction(self, edge: f64) -> Result<f64> {
        let m = match self {
            Margin::Fraction(f) => f,
            Margin::Meters(d) => d / edge,
        };
        if !(0.0..1.0).contains(&m) {
            return Err(Error::Parameter(format!("margin must satisfy 0 <= m < 1 (as a fraction of the edge), got {m}")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    /// World position of the chunk frame origin.
    pub origin: [f64; 3],
    pub edge: f64,
    pub views: Vec<usize>,
}

impl Chunk {
    pub fn aabb(&self) -> Aabb {
        Aabb::cube(self.origin, self.edge)
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.origin)
    }
}

/// Chunk tiling snapped to a voxel lattice of `resolution` voxels per chunk edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub resolution: usize,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkLayout {
    pub chunks: Vec<Chunk>,
    pub grid_counts: [usize; 3],
    pub bounds: SceneBounds,
    /// Overlap as a fraction of `edge`.
    pub margin: f64,
    pub edge: f64,
    pub lattice: Option<Lattice>,
}

/// Half-open voxel index box `[min, min + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub min: [usize; 3],
    pub size: [usize; 3],
}

impl IndexBox {
    pub fn max(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.min[a] + self.size[a])
    }

    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.min[a] && c[a] < self.min[a] + self.size[a])
    }

    pub fn intersect(&self, other: &IndexBox) -> Option<IndexBox> {
        let lo: [usize; 3] = std::array::from_fn(|a| self.min[a].max(other.min[a]));
        let hi: [usize; 3] = std::array::from_fn(|a| self.max()[a].min(other.max()[a]));
        (0..3)
            .all(|a| lo[a] < hi[a])
            .then(|| IndexBox { min: lo, size: std::array::from_fn(|a| hi[a] - lo[a]) })
    }

    pub fn num_voxels(&self) -> usize {
        self.size.iter().product()
    }
}

pub fn compute_chunk_edge(bounds: &SceneBounds) -> Result<f64> {
    compute_chunk_edge_with(bounds, DEFAULT_EDGE_FACTOR)
}

pub fn compute_chunk_edge_with(bounds: &SceneBounds, factor: f64) -> Result<f64> {
    if !(bounds.height > 0.0) {
        return Err(Error::Precondition("scene height must be positive".into()));
    }
    if !(factor >= 1.0) {
        return Err(Error::Parameter(format!("edge factor must be at least 1, got {factor}")));
    }
    Ok(factor * bounds.height)
}

/// Chunk count along an axis of extent `extent`.
pub fn axis_count(extent: f64, edge: f64, margin: f64) -> usize {
    if extent <= edge {
        1
    } else {
        ((extent - edge) / (edge * (1.0 - margin))).ceil() as usize + 1
    }
}

fn emit(origins: [Vec<f64>; 3], edge: f64) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for &x in &origins[0] {
        for &y in &origins[1] {
            for &z in &origins[2] {
                chunks.push(Chunk { id: chunks.len(), origin: [x, y, z], edge, views: Vec::new() });
            }
        }
    }
    chunks
}

/// Real-valued tiling with evenly spaced origins from `aabb.min` to `aabb.max - edge`.
pub fn tile(bounds: &SceneBounds, edge: f64, margin: Margin) -> Result<ChunkLayout> {
    if !(edge > 0.0) {
        return Err(Error::Parameter(format!("chunk edge must be positive, got {edge}")));
    }
    let m = margin.fraction(edge)?;
    let ext = bounds.aabb.extent();
    let origins: [Vec<f64>; 3] = std::array::from_fn(|a| {
        let n = axis_count(ext[a], edge, m);
        let lo = bounds.aabb.min[a];
        if n == 1 {
            vec![lo]
        } else {
            let span = ext[a] - edge;
            (0..n).map(|k| lo + span * k as f64 / (n - 1) as f64).collect()
        }
    });
    let grid_counts = [origins[0].len(), origins[1].len(), origins[2].len()];
    Ok(ChunkLayout { chunks: emit(origins, edge), grid_counts, bounds: *bounds, margin: m, edge, lattice: None })
}

/// Tiling whose chunk origins lie on a global voxel lattice with `resolution`
/// voxels per chunk edge, so crops and merges are exact index operations.
///
/// The global grid starts at `aabb.min` and is extended to at least one chunk
/// per axis. Adjacent chunks overlap by at least `ceil(m * resolution)` voxels.
pub fn tile_on_lattice(bounds: &SceneBounds, edge: f64, margin: Margin, resolution: usize) -> Result<ChunkLayout> {
    if !(edge > 0.0) {
        return Err(Error::Parameter(format!("chunk edge must be positive, got {edge}")));
    }
    if resolution == 0 {
        return Err(Error::Parameter("latent resolution must be positive".into()));
    }
    let m = margin.fraction(edge)?;
    let vs = edge / resolution as f64;
    let stride = ((resolution as f64) * (1.0 - m)).floor() as usize;
    if stride == 0 {
        return Err(Error::Parameter(format!("margin {m} leaves no stride at resolution {resolution}")));
    }
    let ext = bounds.aabb.extent();
    let mut dims = [0usize; 3];
    let mut counts = [0usize; 3];
    let offsets: [Vec<usize>; 3] = std::array::from_fn(|a| {
        // tolerate round-off so an extent of exactly k voxels is not padded
        let total = ((ext[a] / vs) - 1e-9).ceil().max(0.0) as usize;
        let total = total.max(resolution);
        dims[a] = total;
        let span = total - resolution;
        let n = if span == 0 { 1 } else { span.div_ceil(stride) + 1 };
        counts[a] = n;
        if n == 1 {
            vec![0]
        } else {
            (0..n).map(|k| ((k * span) as f64 / (n - 1) as f64).round() as usize).collect()
        }
    });
    let grid = GridSpec::new(bounds.aabb.min, vs, dims)?;
    let origins: [Vec<f64>; 3] =
        std::array::from_fn(|a| offsets[a].iter().map(|&o| grid.origin[a] + o as f64 * vs).collect());
    Ok(ChunkLayout {
        chunks: emit(origins, edge),
        grid_counts: counts,
        bounds: *bounds,
        margin: m,
        edge,
        lattice: Some(Lattice { resolution, grid }),
    })
}

/// Indices of views whose frustum may observe the chunk volume.
pub fn associate_views(chunk: &Chunk, views: &[CameraView], near: f64, far: f64) -> Vec<usize> {
    let aabb = chunk.aabb();
    views
        .iter()
        .enumerate()
        .filter(|(_, v)| frustum_intersects_aabb(v, &aabb, near, far))
        .map(|(i, _)| i)
        .collect()
}

/// Far plane used for association: twice the scene diagonal.
pub fn default_far(bounds: &SceneBounds) -> f64 {
    2.0 * bounds.aabb.diagonal()
}

impl ChunkLayout {
    /// Fill every chunk's view set.
    pub fn associate(&mut self, views: &[CameraView], near: f64, far: f64) {
        let sets: Vec<Vec<usize>> = self.chunks.par_iter().map(|c| associate_views(c, views, near, far)).collect();
        for (c, s) in self.chunks.iter_mut().zip(sets) {
            c.views = s;
        }
    }

    /// Global grid at `factor` times the lattice resolution.
    pub fn global_grid(&self, factor: usize) -> Result<GridSpec> {
        let l = self
            .lattice
            .ok_or_else(|| Error::Alignment("layout is not snapped to a voxel lattice".into()))?;
        Ok(l.grid.refined(factor))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("chunk layout: {e}")))
    }
}

/// Voxel index box of `chunk` inside `grid`; the chunk must sit on the lattice.
pub fn chunk_mask(chunk: &Chunk, grid: &GridSpec) -> Result<IndexBox> {
    let vs = grid.voxel_size;
    let tol = 1e-6;
    let r = chunk.edge / vs;
    let rr = r.round();
    if (r - rr).abs() > tol || rr < 1.0 {
        return Err(Error::Alignment(format!("chunk edge {} is not a multiple of voxel size {vs}", chunk.edge)));
    }
    let res = rr as usize;
    let mut min = [0usize; 3];
    for a in 0..3 {
        let o = (chunk.origin[a] - grid.origin[a]) / vs;
        let oi = o.round();
        if (o - oi).abs() > tol || oi < 0.0 || oi as usize + res > grid.dims[a] {
            return Err(Error::Alignment(format!("chunk {} is not aligned with the global lattice", chunk.id)));
        }
        min[a] = oi as usize;
    }
    Ok(IndexBox { min, size: [res; 3] })
}

/// Number of chunk masks covering each voxel of `grid` (z fastest).
pub fn coverage_counts(layout: &ChunkLayout, grid: &GridSpec) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; grid.num_voxels()];
    for c in &layout.chunks {
        let b = chunk_mask(c, grid)?;
        for i in b.min[0]..b.max()[0] {
            for j in b.min[1]..b.max()[1] {
                let base = grid.linear([i, j, b.min[2]]);
                for n in &mut counts[base..base + b.size[2]] {
                    *n += 1;
                }
            }
        }
    }
    Ok(counts)
}

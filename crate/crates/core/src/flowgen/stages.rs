use super::{marching_cubes, sample_chunked, Denoiser, GlobalLatent, SamplerConfig};
use crate::chunker::ChunkLayout;
use crate::condition::ConditionGrid;
use crate::error::Result;
use crate::geometry::{DenseGrid, GridSpec, SparseGrid};
use crate::nn::sigmoid;
use crate::spatial::PointGrid;
use crate::tensor_io::MeshData;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyResult {
    pub latent: GlobalLatent,
    /// Sigmoid of latent channel 0.
    pub probability: DenseGrid,
    /// 1 where the probability exceeds the threshold, else 0.
    pub occupancy: DenseGrid,
}

impl OccupancyResult {
    pub fn occupied_count(&self) -> usize {
        self.occupancy.data.iter().filter(|v| **v > 0.0).count()
    }
}

/// Occupancy probability: channel 0 of the latent is a logit.
pub fn decode_occupancy(z0: &DenseGrid) -> DenseGrid {
    let data = z0.channel(0).iter().map(|&v| sigmoid(v)).collect();
    DenseGrid { spec: z0.spec, channels: 1, data }
}

pub fn threshold_occupancy(field: &DenseGrid, level: f32) -> DenseGrid {
    let data = field.channel(0).iter().map(|&v| if v > level { 1.0 } else { 0.0 }).collect();
    DenseGrid { spec: field.spec, channels: 1, data }
}

/// Dense occupancy generation on the layout's base lattice.
pub fn run_stage_occupancy(
    layout: &ChunkLayout,
    denoiser: &dyn Denoiser,
    cond: Option<&ConditionGrid>,
    cfg: &SamplerConfig,
    threshold: f32,
) -> Result<OccupancyResult> {
    let spec = layout.global_grid(1)?;
    let latent = sample_chunked(layout, denoiser, &spec, super::all_coords(&spec), true, cond, cfg)?;
    let probability = decode_occupancy(&latent.to_dense());
    let occupancy = threshold_occupancy(&probability, threshold);
    Ok(OccupancyResult { latent, probability, occupancy })
}

/// Fine sparse structure: each occupied cell split into `factor^3` children.
pub fn upsample_structure(occupancy: &DenseGrid, factor: usize) -> (GridSpec, Vec<[u32; 3]>) {
    let fine = occupancy.spec.refined(factor);
    let mut coords = Vec::new();
    for (l, &v) in occupancy.channel(0).iter().enumerate() {
        if v > 0.0 {
            let c = occupancy.spec.unlinear(l);
            for i in 0..factor {
                for j in 0..factor {
                    for k in 0..factor {
                        coords.push([(c[0] * factor + i) as u32, (c[1] * factor + j) as u32, (c[2] * factor + k) as u32]);
                    }
                }
            }
        }
    }
    coords.sort_unstable();
    (fine, coords)
}

/// Sparse detail generation on the given fine structure.
pub fn run_stage_detail(
    layout: &ChunkLayout,
    denoiser: &dyn Denoiser,
    fine: &GridSpec,
    coords: Vec<[u32; 3]>,
    cond: Option<&ConditionGrid>,
    cfg: &SamplerConfig,
) -> Result<SparseGrid> {
    if coords.is_empty() {
        log::warn!("empty occupancy: skipping the detail stage");
        return SparseGrid::new(*fine, denoiser.latent_channels(), Vec::new(), Vec::new());
    }
    Ok(sample_chunked(layout, denoiser, fine, coords, false, cond, cfg)?.grid)
}

/// Marching cubes on the zero-padded binary occupancy at level 0.5, with
/// per-vertex colors from the nearest detail voxel, mapped from [-1, 1] to [0, 1].
pub fn decode_to_mesh(occupancy: &DenseGrid, detail: Option<&SparseGrid>) -> MeshData {
    let s = occupancy.spec;
    let d = s.dims;
    let pd = [d[0] + 2, d[1] + 2, d[2] + 2];
    let mut vals = vec![0.0f32; pd[0] * pd[1] * pd[2]];
    for (l, &v) in occupancy.channel(0).iter().enumerate() {
        let c = s.unlinear(l);
        vals[((c[0] + 1) * pd[1] + c[1] + 1) * pd[2] + c[2] + 1] = if v > 0.5 { 1.0 } else { 0.0 };
    }
    let origin = s.origin.map(|o| o - 0.5 * s.voxel_size);
    let mut mesh = marching_cubes(&vals, pd, origin, s.voxel_size, 0.5);
    if let Some(det) = detail.filter(|g| g.channels >= 3 && !g.is_empty()) {
        let centers: Vec<[f64; 3]> = det
            .coords
            .iter()
            .map(|c| {
                let p = det.spec.center(c.map(|v| v as usize));
                [p.x, p.y, p.z]
            })
            .collect();
        let grid = PointGrid::new(&centers);
        let colors = mesh
            .vertices
            .iter()
            .map(|v| {
                let (_, i) = grid.nearest(&v.map(|c| c as f64)).unwrap();
                let f = det.voxel(i);
                std::array::from_fn(|k| ((f[k] + 1.0) * 0.5).clamp(0.0, 1.0))
            })
            .collect();
        mesh.colors = Some(colors);
    }
    mesh
}

//! Flow-matching sampling over a global latent grid with joint per-chunk
//! denoising and overlap merging.

mod marching;
mod mc_tables;
mod stages;

pub use marching::marching_cubes;
pub use stages::{
    decode_occupancy, decode_to_mesh, run_stage_detail, run_stage_occupancy, threshold_occupancy, upsample_structure,
    OccupancyResult,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_mask, ChunkLayout, IndexBox};
use crate::condition::ConditionGrid;
use crate::error::{Error, Result};
use crate::geometry::{Axis, DenseGrid, GridSpec, SparseGrid};

/// Integration times `0 = t_0 < ... < t_S = 1`; `t = 0` is noise, `t = 1` data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    times: Vec<f64>,
}

impl FlowSchedule {
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("flow schedule needs at least one step".into()));
        }
        Ok(Self { times: (0..=steps).map(|k| k as f64 / steps as f64).collect() })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || *times.last().unwrap() != 1.0 || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("flow times must increase strictly from 0 to 1".into()));
        }
        Ok(Self { times })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

impl Default for FlowSchedule {
    fn default() -> Self {
        Self::uniform(12).unwrap()
    }
}

/// Euler step `z + (t_next - t) v`, evaluated in f64 per element.
pub fn flow_step(z: &[f32], velocity: &[f32], t: f64, t_next: f64) -> Result<Vec<f32>> {
    if z.len() != velocity.len() {
        return Err(Error::Shape(format!("latent has {} values, velocity {}", z.len(), velocity.len())));
    }
    if !(t < t_next) {
        return Err(Error::Parameter(format!("flow step needs t < t_next, got {t} and {t_next}")));
    }
    let dt = t_next - t;
    Ok(z.iter().zip(velocity).map(|(a, b)| (*a as f64 + dt * *b as f64) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 3.0, enabled: true }
    }
}

/// A latent crop handed to the denoiser: channel-major `[C][nx][ny][nz]`
/// with its world-frame header and an optional occupancy mask.
#[derive(Debug, Clone, Copy)]
pub struct LatentCrop<'a> {
    pub spec: GridSpec,
    pub channels: usize,
    pub data: &'a [f32],
    pub mask: Option<&'a [bool]>,
}

/// Velocity predictor. `cond = None` requests the unconditional prediction.
pub trait Denoiser: Sync {
    fn latent_channels(&self) -> usize;

    fn predict_velocity(&self, z: &LatentCrop<'_>, t: f64, cond: Option<&DenseGrid>, out: &mut [f32]) -> Result<()>;
}

/// Classifier-free guided velocity `v_u + s (v_c - v_u)`.
///
/// With guidance disabled, no condition, or `s = 1`, this is the conditioned
/// prediction from a single call; `s = 0` is the unconditional prediction.
pub fn guided_velocity(
    den: &dyn Denoiser,
    z: &LatentCrop<'_>,
    t: f64,
    cond: Option<&DenseGrid>,
    guidance: &GuidanceConfig,
    out: &mut [f32],
) -> Result<()> {
    if guidance.scale < 0.0 {
        return Err(Error::Parameter(format!("guidance scale must be non-negative, got {}", guidance.scale)));
    }
    if !guidance.enabled || cond.is_none() || guidance.scale == 1.0 {
        return den.predict_velocity(z, t, cond, out);
    }
    if guidance.scale == 0.0 {
        return den.predict_velocity(z, t, None, out);
    }
    let mut vu = vec![0.0f32; out.len()];
    den.predict_velocity(z, t, cond, out)?;
    den.predict_velocity(z, t, None, &mut vu)?;
    let s = guidance.scale;
    for (o, u) in out.iter_mut().zip(&vu) {
        let (c, u) = (*o as f64, *u as f64);
        *o = (u + s * (c - u)) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeTarget {
    /// Average the per-chunk next states.
    #[default]
    State,
    /// Average per-chunk velocities, then take one global Euler step.
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    /// Outer voxel layers on the two non-up faces that do not contribute; 0 = plain mean.
    pub boundary_width: usize,
    pub up_axis: Axis,
    pub target: MergeTarget,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { boundary_width: 0, up_axis: Axis::Y, target: MergeTarget::State }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub schedule: FlowSchedule,
    pub guidance: GuidanceConfig,
    pub merge: MergeConfig,
    pub seed: u64,
    pub stage: String,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: FlowSchedule::default(),
            guidance: GuidanceConfig::default(),
            merge: MergeConfig::default(),
            seed: 0,
            stage: "sample".into(),
        }
    }
}

/// Scene-spanning latent over a sorted voxel list, voxel-major data.
/// A dense latent lists every voxel of its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalLatent {
    pub grid: SparseGrid,
    pub dense: bool,
}

impl GlobalLatent {
    pub fn to_dense(&self) -> DenseGrid {
        self.grid.to_dense()
    }
}

/// Every coordinate of `spec` in lexicographic order.
pub fn all_coords(spec: &GridSpec) -> Vec<[u32; 3]> {
    spec.iter_coords().map(|c| c.map(|v| v as u32)).collect()
}

/// Unit Gaussian noise drawn per voxel in global coordinate order.
pub fn initial_noise(n_voxels: usize, channels: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_voxels * channels).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Per-chunk bookkeeping fixed across flow steps.
struct ChunkWork {
    spec: GridSpec,
    /// (global voxel index, local linear index) pairs.
    entries: Vec<(usize, usize)>,
    /// Whether each entry contributes to the cross-chunk mean.
    contributes: Vec<bool>,
    mask: Option<Vec<bool>>,
    cond: Option<DenseGrid>,
}

fn prepare(
    layout: &ChunkLayout,
    spec: &GridSpec,
    coords: &[[u32; 3]],
    dense: bool,
    cond: Option<&ConditionGrid>,
    merge: &MergeConfig,
) -> Result<Vec<ChunkWork>> {
    let b = merge.boundary_width;
    let others = merge.up_axis.others();
    layout
        .chunks
        .iter()
        .map(|chunk| {
            let bx: IndexBox = chunk_mask(chunk, spec)?;
            if b > 0 && others.iter().any(|&a| 2 * b >= bx.size[a]) {
                return Err(Error::Parameter(format!(
                    "boundary width {b} leaves no interior in a chunk of {:?} voxels",
                    bx.size
                )));
            }
            let sub = spec.sub(bx.min, bx.size);
            let mut entries = Vec::new();
            let mut contributes = Vec::new();
            for (g, c) in coords.iter().enumerate() {
                let c = c.map(|v| v as usize);
                if !bx.contains(c) {
                    continue;
                }
                let local: [usize; 3] = std::array::from_fn(|a| c[a] - bx.min[a]);
                entries.push((g, sub.linear(local)));
                contributes.push(others.iter().all(|&a| local[a] >= b && local[a] + b < bx.size[a]));
            }
            let mask = (!dense).then(|| {
                let mut m = vec![false; sub.num_voxels()];
                for &(_, l) in &entries {
                    m[l] = true;
                }
                m
            });
            let cond = match cond {
                Some(c) => {
                    if c.spec().dims != spec.dims || (c.spec().voxel_size - spec.voxel_size).abs() > 1e-9 * spec.voxel_size {
                        return Err(Error::Shape("condition grid does not match the latent grid".into()));
                    }
                    Some(c.crop_box(&bx).to_dense())
                }
                None => None,
            };
            Ok(ChunkWork { spec: sub, entries, contributes, mask, cond })
        })
        .collect()
}

/// Jointly sample all chunks of `layout` on the voxel list `coords` of `spec`.
///
/// Each step evaluates every chunk on its crop of the current global latent,
/// then merges the per-chunk predictions into the next global latent by
/// mask-weighted averaging. With a boundary width, voxels in a chunk's outer
/// layers on the non-up faces do not contribute; voxels that no interior
/// region covers take the plain average over their covering chunks.
pub fn sample_chunked(
    layout: &ChunkLayout,
    denoiser: &dyn Denoiser,
    spec: &GridSpec,
    coords: Vec<[u32; 3]>,
    dense: bool,
    cond: Option<&ConditionGrid>,
    cfg: &SamplerConfig,
) -> Result<GlobalLatent> {
    let ch = denoiser.latent_channels();
    let n = coords.len();
    let z0 = initial_noise(n, ch, cfg.seed);
    sample_chunked_from(layout, denoiser, spec, coords, dense, cond, cfg, z0)
}

/// As [`sample_chunked`], starting from the given voxel-major noise.
#[allow(clippy::too_many_arguments)]
pub fn sample_chunked_from(
    layout: &ChunkLayout,
    denoiser: &dyn Denoiser,
    spec: &GridSpec,
    coords: Vec<[u32; 3]>,
    dense: bool,
    cond: Option<&ConditionGrid>,
    cfg: &SamplerConfig,
    z0: Vec<f32>,
) -> Result<GlobalLatent> {
    let ch = denoiser.latent_channels();
    let n = coords.len();
    if z0.len() != n * ch {
        return Err(Error::Shape(format!("initial latent has {} values, expected {}", z0.len(), n * ch)));
    }
    // the state is integrated in f64; the denoiser sees it rounded to f32
    let mut z: Vec<f64> = z0.iter().map(|&v| v as f64).collect();
    let work = prepare(layout, spec, &coords, dense, cond, &cfg.merge)?;
    let mut cover = vec![0u32; n];
    for w in &work {
        for &(g, _) in &w.entries {
            cover[g] += 1;
        }
    }
    if let Some(g) = cover.iter().position(|&c| c == 0) {
        return Err(Error::Layout(format!("voxel {:?} is not covered by any chunk", coords[g])));
    }
    let times = cfg.schedule.times();
    let velocity_merge = cfg.merge.target == MergeTarget::Velocity;
    for s in 0..cfg.schedule.steps() {
        let (t, tn) = (times[s], times[s + 1]);
        let dt = tn - t;
        let preds: Vec<Vec<f64>> = work
            .par_iter()
            .map(|w| -> Result<Vec<f64>> {
                let nl = w.spec.num_voxels();
                let mut local = vec![0.0f32; ch * nl];
                for &(g, l) in &w.entries {
                    for c in 0..ch {
                        local[c * nl + l] = z[g * ch + c] as f32;
                    }
                }
                let crop = LatentCrop { spec: w.spec, channels: ch, data: &local, mask: w.mask.as_deref() };
                let mut v = vec![0.0f32; ch * nl];
                guided_velocity(denoiser, &crop, t, w.cond.as_ref(), &cfg.guidance, &mut v)?;
                let mut out = Vec::with_capacity(w.entries.len() * ch);
                for &(g, l) in &w.entries {
                    for c in 0..ch {
                        let vi = v[c * nl + l] as f64;
                        out.push(if velocity_merge { vi } else { z[g * ch + c] + dt * vi });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut acc = vec![0.0f64; n * ch];
        let mut wsum = vec![0u32; n];
        let mut all_acc = vec![0.0f64; n * ch];
        for (w, p) in work.iter().zip(&preds) {
            for (e, (&(g, _), &inner)) in w.entries.iter().zip(&w.contributes).enumerate() {
                for c in 0..ch {
                    let v = p[e * ch + c];
                    all_acc[g * ch + c] += v;
                    if inner {
                        acc[g * ch + c] += v;
                    }
                }
                if inner {
                    wsum[g] += 1;
                }
            }
        }
        for g in 0..n {
            for c in 0..ch {
                let m = if wsum[g] > 0 {
                    acc[g * ch + c] / wsum[g] as f64
                } else {
                    all_acc[g * ch + c] / cover[g] as f64
                };
                let k = g * ch + c;
                z[k] = if velocity_merge { z[k] + dt * m } else { m };
            }
        }
        log::info!("stage {} step {}/{} t={:.4}", cfg.stage, s + 1, cfg.schedule.steps(), tn);
    }
    let z = z.into_iter().map(|v| v as f32).collect();
    Ok(GlobalLatent { grid: SparseGrid::new(*spec, ch, coords, z)?, dense })
}

/// Plain sampling of one dense crop without any chunking.
pub fn sample_single(
    denoiser: &dyn Denoiser,
    spec: &GridSpec,
    cond: Option<&DenseGrid>,
    cfg: &SamplerConfig,
    noise: Vec<f32>,
) -> Result<Vec<f32>> {
    let ch = denoiser.latent_channels();
    let nl = spec.num_voxels();
    if noise.len() != nl * ch {
        return Err(Error::Shape("noise does not match the crop".into()));
    }
    // noise is voxel-major; the denoiser works channel-major
    let mut z = vec![0.0f64; nl * ch];
    for l in 0..nl {
        for c in 0..ch {
            z[c * nl + l] = noise[l * ch + c] as f64;
        }
    }
    let times = cfg.schedule.times();
    let mut v = vec![0.0f32; nl * ch];
    let mut zf = vec![0.0f32; nl * ch];
    for s in 0..cfg.schedule.steps() {
        for (a, b) in zf.iter_mut().zip(&z) {
            *a = *b as f32;
        }
        let crop = LatentCrop { spec: *spec, channels: ch, data: &zf, mask: None };
        guided_velocity(denoiser, &crop, times[s], cond, &cfg.guidance, &mut v)?;
        let dt = times[s + 1] - times[s];
        for (a, b) in z.iter_mut().zip(&v) {
            *a += dt * *b as f64;
        }
    }
    Ok(z.into_iter().map(|v| v as f32).collect())
}

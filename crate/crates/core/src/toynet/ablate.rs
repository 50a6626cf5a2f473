use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::to_channel_major;
use super::scene::ToyScene;
use super::train::{lift_chunk_views, ToyModel};
use crate::chunker::chunk_mask;
use crate::condition::{aggregate_raw, AggregatorParams, PerViewGrid, StatsMode};
use crate::error::Result;
use crate::evalsuite::{chamfer, f_score, normal_consistency, occupancy_iou, sample_surface, DEFAULT_NORMAL_CAP};
use crate::flowgen::{decode_to_mesh, initial_noise, sample_single, Denoiser, SamplerConfig};
use crate::geometry::DenseGrid;

/// Conditioning used for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The first `k` views of the chunk's fixed view order.
    Views(usize),
    /// Condition replaced by zeros.
    ZeroCondition,
    /// One view through a freshly initialized aggregator.
    UntrainedAggregator,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Views(k) => format!("{k}img"),
            Variant::ZeroCondition => "no_cond".into(),
            Variant::UntrainedAggregator => "1img_untrained_agg".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub variants: Vec<Variant>,
    /// Surface samples per mesh.
    pub samples: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            variants: vec![
                Variant::UntrainedAggregator,
                Variant::ZeroCondition,
                Variant::Views(1),
                Variant::Views(2),
                Variant::Views(4),
                Variant::Views(8),
            ],
            samples: 20_000,
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEval {
    pub scene: u64,
    pub chunk: usize,
    pub variant: Variant,
    pub views: usize,
    pub iou: f64,
    pub f_score: f64,
    pub chamfer: f64,
    pub normal_consistency: f64,
}

/// The chunk associated with the most views; ties go to the lowest id.
pub fn best_chunk(scene: &ToyScene) -> usize {
    let mut best = 0;
    for (i, c) in scene.layout.chunks.iter().enumerate() {
        if c.views.len() > scene.layout.chunks[best].views.len() {
            best = i;
        }
    }
    best
}

/// Seeded order of the chunk's views; view subsets are its prefixes, so they nest.
pub fn view_order(scene: &ToyScene, chunk: usize, seed: u64) -> Vec<usize> {
    let mut v = scene.layout.chunks[chunk].views.clone();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ scene.seed.rotate_left(17)));
    v
}

fn condition_grid(views: &[PerViewGrid], agg: &AggregatorParams<f32>, spec: crate::geometry::GridSpec) -> Result<Option<DenseGrid>> {
    if views.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&PerViewGrid> = views.iter().collect();
    let a = aggregate_raw(&refs, agg, StatsMode::ValidOnly)?;
    let mut data = vec![0.0f32; a.features.len()];
    to_channel_major(&a.features, agg.dim, &mut data);
    Ok(Some(DenseGrid::from_data(spec, agg.dim, data)?))
}

/// Generate the chunk's occupancy under `variant` and score it against the scene.
pub fn eval_chunk(model: &ToyModel<f32>, scene: &ToyScene, chunk: usize, variant: Variant, protocol: &EvalProtocol) -> Result<ChunkEval> {
    let b = chunk_mask(&scene.layout.chunks[chunk], scene.grid())?;
    let spec = scene.grid().sub(b.min, b.size);
    let order = view_order(scene, chunk, protocol.seed);
    let fresh;
    let (ids, agg): (Vec<usize>, &AggregatorParams<f32>) = match variant {
        Variant::Views(k) => (order.iter().take(k).copied().collect(), &model.aggregator),
        Variant::ZeroCondition => (Vec::new(), &model.aggregator),
        Variant::UntrainedAggregator => {
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            fresh = AggregatorParams::init(model.aggregator.dim, model.aggregator.hidden, &mut rng);
            (order.iter().take(1).copied().collect(), &fresh)
        }
    };
    let views = lift_chunk_views(scene, chunk, &ids)?;
    let cond = condition_grid(&views, agg, spec)?;
    let den: &dyn Denoiser = &model.denoiser;
    let ch = den.latent_channels();
    let noise = initial_noise(spec.num_voxels(), ch, protocol.seed ^ scene.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let z = sample_single(den, &spec, cond.as_ref(), &protocol.sampler, noise)?;
    let n = spec.num_voxels();
    let occ: Vec<f32> = z[..n].iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let pred = DenseGrid::from_data(spec, 1, occ)?;
    let gt = scene.occupancy.crop(b.min, b.size);
    let iou = occupancy_iou(&pred, &gt)?;
    let gt_mesh = decode_to_mesh(&gt, None);
    let pred_mesh = decode_to_mesh(&pred, None);
    let gs = sample_surface(&gt_mesh, protocol.samples, protocol.seed)?;
    let (f, cd, nc) = if pred_mesh.is_empty() {
        let e = spec.voxel_size * spec.dims.iter().map(|&d| (d * d) as f64).sum::<f64>().sqrt();
        (0.0, e, 0.0)
    } else {
        let ps = sample_surface(&pred_mesh, protocol.samples, protocol.seed)?;
        (f_score(&ps, &gs, spec.voxel_size)?.f, chamfer(&ps, &gs)?, normal_consistency(&ps, &gs, DEFAULT_NORMAL_CAP)?)
    };
    Ok(ChunkEval { scene: scene.seed, chunk, variant, views: ids.len(), iou, f_score: f, chamfer: cd, normal_consistency: nc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub iou: f64,
    pub f_score: f64,
    pub chamfer: f64,
    pub normal_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub per_chunk: Vec<ChunkEval>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,iou,f_score,chamfer,normal_consistency\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.variant.label(), r.iou, r.f_score, r.chamfer, r.normal_consistency);
        }
        s
    }
}

/// Evaluate every variant on the best chunk of each scene and average.
pub fn ablate(model: &ToyModel<f32>, scenes: &[ToyScene], protocol: &EvalProtocol) -> Result<AblationTable> {
    let mut per_chunk = Vec::new();
    for scene in scenes {
        let chunk = best_chunk(scene);
        for &v in &protocol.variants {
            let e = eval_chunk(model, scene, chunk, v, protocol)?;
            log::debug!("scene {} {}: iou {:.3} f {:.3}", scene.seed, v.label(), e.iou, e.f_score);
            per_chunk.push(e);
        }
    }
    let rows = protocol
        .variants
        .iter()
        .map(|&v| {
            let sel: Vec<&ChunkEval> = per_chunk.iter().filter(|e| e.variant == v).collect();
            let mean = |f: fn(&ChunkEval) -> f64| sel.iter().map(|e| f(e)).sum::<f64>() / sel.len().max(1) as f64;
            AblationRow {
                variant: v,
                iou: mean(|e| e.iou),
                f_score: mean(|e| e.f_score),
                chamfer: mean(|e| e.chamfer),
                normal_consistency: mean(|e| e.normal_consistency),
            }
        })
        .collect();
    Ok(AblationTable { rows, per_chunk })
}

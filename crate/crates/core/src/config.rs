use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrateParams;
use crate::chunker::{Margin, DEFAULT_EDGE_FACTOR, DEFAULT_NEAR};
use crate::condition::StatsMode;
use crate::error::{Error, Result};
use crate::evalsuite::{DEFAULT_NORMAL_CAP, DEFAULT_SAMPLES, DEFAULT_TAU};
use crate::flowgen::{FlowSchedule, GuidanceConfig, MergeConfig, MergeTarget, SamplerConfig};
use crate::geometry::{Axis, Interpolation};
use crate::toynet::{EvalProtocol, TrainConfig, TOY_RESOLUTION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkSettings {
    pub margin: Margin,
    /// Chunk edge as a multiple of the scene height.
    pub edge_factor: f64,
    /// Occupancy-stage voxels per chunk edge.
    pub resolution: usize,
    /// Near plane for view association, meters.
    pub near: f64,
    /// Far plane for view association; twice the scene diagonal when absent.
    pub far: Option<f64>,
}

impl Default for ChunkSettings {
    fn default() -> Self {
        Self { margin: Margin::default(), edge_factor: DEFAULT_EDGE_FACTOR, resolution: TOY_RESOLUTION, near: DEFAULT_NEAR, far: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionSettings {
    pub stats: StatsMode,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSettings {
    pub flow_steps: usize,
    pub guidance_scale: f64,
    pub guidance: bool,
    /// Outer chunk layers excluded from the merge on the non-up faces.
    pub boundary_width: usize,
    pub merge_target: MergeTarget,
    pub occupancy_threshold: f32,
    /// Detail-stage refinement of the occupancy lattice (16 to 32 per chunk).
    pub detail_factor: usize,
    pub seed: u64,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            flow_steps: 12,
            guidance_scale: 3.0,
            guidance: true,
            boundary_width: 1,
            merge_target: MergeTarget::State,
            occupancy_threshold: 0.5,
            detail_factor: 2,
            seed: 0,
        }
    }
}

impl GenerateSettings {
    pub fn sampler(&self, up_axis: Axis, stage: &str, seed: u64) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            schedule: FlowSchedule::uniform(self.flow_steps)?,
            guidance: GuidanceConfig { scale: self.guidance_scale, enabled: self.guidance },
            merge: MergeConfig { boundary_width: self.boundary_width, up_axis, target: self.merge_target },
            seed,
            stage: stage.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub samples: usize,
    pub tau: f64,
    pub normal_cap: f64,
    /// Output resolution of `render`; the view's own size when absent.
    pub resolution: Option<(u32, u32)>,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, tau: DEFAULT_TAU, normal_cap: DEFAULT_NORMAL_CAP, resolution: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySettings {
    pub train: TrainConfig,
    /// Training scenes use seeds `0..train_scenes`.
    pub train_scenes: u64,
    /// Held-out scenes use seeds `heldout_first..heldout_first + heldout_scenes`.
    pub heldout_first: u64,
    pub heldout_scenes: u64,
    pub protocol: EvalProtocol,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_scenes: 200,
            heldout_first: 10_000,
            heldout_scenes: 20,
            protocol: EvalProtocol::default(),
        }
    }
}

/// Every tunable of the pipeline, read from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub calibrate: CalibrateParams,
    pub chunk: ChunkSettings,
    pub condition: ConditionSettings,
    pub generate: GenerateSettings,
    pub eval: EvalSettings,
    pub toy: ToySettings,
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what()))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.calibrate;
        check(c.stat_k >= 1, || "calibrate.stat_k must be at least 1".into())?;
        check(c.stat_ratio > 0.0, || format!("calibrate.stat_ratio must be positive, got {}", c.stat_ratio))?;
        check(c.radius > 0.0, || format!("calibrate.radius must be positive, got {}", c.radius))?;
        check(0.0 <= c.p_low && c.p_low < c.p_high && c.p_high <= 100.0, || {
            format!("calibrate percentiles must satisfy 0 <= p_low < p_high <= 100, got {} and {}", c.p_low, c.p_high)
        })?;
        check(c.pad >= 0.0, || format!("calibrate.pad must be >= 0, got {}", c.pad))?;

        let k = &self.chunk;
        match k.margin {
            Margin::Fraction(f) => check((0.0..1.0).contains(&f), || format!("chunk.margin fraction must lie in [0, 1), got {f}"))?,
            Margin::Meters(d) => check(d >= 0.0, || format!("chunk.margin meters must be >= 0, got {d}"))?,
        }
        check(k.edge_factor > 0.0, || format!("chunk.edge_factor must be positive, got {}", k.edge_factor))?;
        check(k.resolution >= 2, || format!("chunk.resolution must be at least 2, got {}", k.resolution))?;
        check(k.near > 0.0, || format!("chunk.near must be positive, got {}", k.near))?;
        if let Some(f) = k.far {
            check(f > k.near, || format!("chunk.far ({f}) must exceed chunk.near ({})", k.near))?;
        }

        let g = &self.generate;
        check(g.flow_steps >= 1, || "generate.flow_steps must be at least 1".into())?;
        check(g.guidance_scale.is_finite() && g.guidance_scale >= 0.0, || {
            format!("generate.guidance_scale must be finite and >= 0, got {}", g.guidance_scale)
        })?;
        check(2 * g.boundary_width < k.resolution, || {
            format!("generate.boundary_width {} leaves no interior in a {}-voxel chunk", g.boundary_width, k.resolution)
        })?;
        check(g.occupancy_threshold > 0.0 && g.occupancy_threshold < 1.0, || {
            format!("generate.occupancy_threshold must lie in (0, 1), got {}", g.occupancy_threshold)
        })?;
        check(g.detail_factor >= 1, || "generate.detail_factor must be at least 1".into())?;

        let e = &self.eval;
        check(e.samples >= 1, || "eval.samples must be at least 1".into())?;
        check(e.tau > 0.0, || format!("eval.tau must be positive, got {}", e.tau))?;
        check(e.normal_cap > 0.0, || format!("eval.normal_cap must be positive, got {}", e.normal_cap))?;
        if let Some((w, h)) = e.resolution {
            check(w > 0 && h > 0, || "eval.resolution must be positive".into())?;
        }

        let t = &self.toy;
        t.train.validate().map_err(|e| Error::Config(format!("toy.train: {e}")))?;
        check(t.train_scenes >= 1, || "toy.train_scenes must be at least 1".into())?;
        check(t.protocol.samples >= 1, || "toy.protocol.samples must be at least 1".into())?;
        check(t.train_scenes <= t.heldout_first, || "toy held-out seeds overlap the training seeds".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg.generate.flow_steps, 12);
        assert_eq!(cfg.generate.boundary_width, 1);
        assert_eq!(cfg.chunk.edge_factor, 1.11);
        assert_eq!(cfg.chunk.margin, Margin::Fraction(0.25));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml("[generate]\nguidance_scale = 1.5\n[chunk]\nmargin = { unit = \"meters\", value = 0.5 }\n").unwrap();
        assert_eq!(cfg.generate.guidance_scale, 1.5);
        assert_eq!(cfg.generate.flow_steps, 12);
        assert_eq!(cfg.chunk.margin, Margin::Meters(0.5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1\n", "[generate]\nflow_step = 3\n", "[toy.train]\nlr = 0.1\n"] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in [
            "[generate]\nflow_steps = 0\n",
            "[generate]\noccupancy_threshold = 1.0\n",
            "[generate]\nboundary_width = 8\n",
            "[chunk]\nmargin = { unit = \"fraction\", value = 1.0 }\n",
            "[chunk]\nedge_factor = -1.0\n",
            "[calibrate]\np_low = 60.0\np_high = 40.0\n",
            "[eval]\ntau = 0.0\n",
            "[toy.train]\ncond_dropout = 2.0\n",
            "[toy]\ntrain_scenes = 20000\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}

//! Stage orchestration with file-based handoff: COLMAP models, JSON
//! manifests and CGF1 tensors.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate, CalibrateParams, SceneBounds, SparsePointCloud};
use crate::chunker::{compute_chunk_edge_with, default_far, tile_on_lattice, ChunkLayout};
use crate::condition::{build_global_condition, Voxels};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evalsuite::sample_surface;
use crate::flowgen::{decode_to_mesh, run_stage_detail, run_stage_occupancy, upsample_structure, OccupancyResult};
use crate::geometry::{Aabb, Axis, CameraView, DenseGrid, FeatureMap, ImageRgb, SparseGrid};
use crate::tensor_io::colmap::image_from_pose;
use crate::tensor_io::{read_tensor, write_colmap, write_mesh, write_tensor, ColmapCamera, ColmapModel, ColmapPoint, MeshData, MeshFormat, TensorFile};
use crate::toynet::{gen_scene, toy_descriptor, ToyModel, PATCH};

const FEATURE_INDEX: &str = "features.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Posed views of a COLMAP model, in image-id order, with their image names.
pub fn views_from_colmap(model: &ColmapModel) -> Result<(Vec<CameraView>, Vec<String>)> {
    let mut images: Vec<_> = model.images.iter().collect();
    images.sort_by_key(|i| i.id);
    let mut views = Vec::with_capacity(images.len());
    let mut names = Vec::with_capacity(images.len());
    for im in images {
        let cam = model
            .camera(im.camera_id)
            .ok_or_else(|| Error::Reference(format!("image {} references missing camera {}", im.id, im.camera_id)))?;
        views.push(CameraView::new(cam.intrinsics()?, im.camera_to_world()));
        names.push(im.name.clone());
    }
    Ok((views, names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub image: String,
    pub file: String,
}

/// Index of a feature directory: one `[C, H, W]` tensor per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureIndex {
    pub stride: usize,
    pub entries: Vec<FeatureEntry>,
}

fn feature_file(image: &str) -> String {
    let stem = Path::new(image).file_stem().and_then(|s| s.to_str()).unwrap_or(image);
    format!("{stem}.cgf")
}

pub fn write_features(dir: &Path, names: &[String], maps: &[&FeatureMap]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stride = maps.first().map_or(PATCH, |m| m.stride);
    let mut entries = Vec::with_capacity(names.len());
    for (name, fm) in names.iter().zip(maps) {
        if fm.stride != stride {
            return Err(Error::Input("feature maps of one directory must share a stride".into()));
        }
        let file = feature_file(name);
        write_tensor(dir.join(&file), &TensorFile::new(vec![fm.channels, fm.height, fm.width], fm.data.clone())?)?;
        entries.push(FeatureEntry { image: name.clone(), file });
    }
    write_json(&dir.join(FEATURE_INDEX), &FeatureIndex { stride, entries })
}

/// Attach the feature map of every named view from `dir`.
pub fn attach_features(views: &mut [CameraView], names: &[String], dir: &Path) -> Result<()> {
    let index: FeatureIndex = read_json(&dir.join(FEATURE_INDEX))?;
    for (view, name) in views.iter_mut().zip(names) {
        let entry = index
            .entries
            .iter()
            .find(|e| &e.image == name)
            .ok_or_else(|| Error::Reference(format!("no feature map for image `{name}`")))?;
        let t = read_tensor(dir.join(&entry.file))?;
        let [c, h, w] = t.dims() else {
            return Err(Error::Shape(format!("feature tensor `{}` must be [C, H, W], got {:?}", entry.file, t.dims())));
        };
        let (c, h, w) = (*c, *h, *w);
        view.feature_map = Some(Arc::new(FeatureMap::new(c, h, w, index.stride, t.into_parts().1)?));
    }
    Ok(())
}

/// Output manifest of the calibration stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationManifest {
    pub bounds: Aabb,
    pub up_axis: Axis,
    pub height: f64,
    pub input_points: usize,
    pub kept_points: usize,
    pub params: CalibrateParams,
}

impl CalibrationManifest {
    pub fn scene_bounds(&self) -> Result<SceneBounds> {
        SceneBounds::new(self.bounds, self.up_axis)
    }
}

pub fn calibrate_model(model: &ColmapModel, params: &CalibrateParams) -> Result<(SparsePointCloud, CalibrationManifest)> {
    let cloud = SparsePointCloud::new(model.points.iter().map(|p| p.xyz).collect())?;
    let (kept, bounds) = calibrate(&cloud, params)?;
    let manifest = CalibrationManifest {
        bounds: bounds.aabb,
        up_axis: bounds.up_axis,
        height: bounds.height,
        input_points: cloud.len(),
        kept_points: kept.len(),
        params: *params,
    };
    Ok((kept, manifest))
}

/// Lattice-snapped layout over the bounds with every chunk's views associated.
pub fn chunk_scene(bounds: &SceneBounds, views: &[CameraView], cfg: &PipelineConfig) -> Result<ChunkLayout> {
    let c = &cfg.chunk;
    let edge = compute_chunk_edge_with(bounds, c.edge_factor)?;
    let mut layout = tile_on_lattice(bounds, edge, c.margin, c.resolution)?;
    layout.associate(views, c.near, c.far.unwrap_or_else(|| default_far(bounds)));
    Ok(layout)
}

/// Both generation stages and the decoded mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub occupancy: OccupancyResult,
    pub detail: SparseGrid,
    pub mesh: MeshData,
}

/// Condition on `views`, sample occupancy then detail, and decode a mesh.
pub fn generate(layout: &ChunkLayout, views: &[CameraView], model: &ToyModel<f32>, cfg: &PipelineConfig, seed: u64) -> Result<Generation> {
    let g = &cfg.generate;
    let up = model.denoiser.config.up_axis;
    let spec = layout.global_grid(1)?;
    let cond_mode = cfg.condition;
    let cond = if views.is_empty() {
        None
    } else {
        Some(build_global_condition(views, Voxels::Dense(&spec), &model.aggregator, cond_mode.stats, cond_mode.interpolation)?)
    };
    let occupancy = run_stage_occupancy(layout, &model.denoiser, cond.as_ref(), &g.sampler(up, "occupancy", seed)?, g.occupancy_threshold)?;
    log::info!("occupancy stage: {} occupied voxels", occupancy.occupied_count());
    let (fine, coords) = upsample_structure(&occupancy.occupancy, g.detail_factor);
    let fine_cond = if views.is_empty() || coords.is_empty() {
        None
    } else {
        Some(build_global_condition(views, Voxels::Sparse(&fine, &coords), &model.aggregator, cond_mode.stats, cond_mode.interpolation)?)
    };
    let detail_seed = seed.wrapping_add(1);
    let detail = run_stage_detail(layout, &model.denoiser, &fine, coords, fine_cond.as_ref(), &g.sampler(up, "detail", detail_seed)?)?;
    let mesh = decode_to_mesh(&occupancy.occupancy, Some(&detail));
    Ok(Generation { occupancy, detail, mesh })
}

pub fn dense_to_tensor(grid: &DenseGrid) -> Result<TensorFile> {
    let [x, y, z] = grid.spec.dims;
    TensorFile::new(vec![grid.channels, x, y, z], grid.data.clone())
}

pub fn sparse_to_tensors(grid: &SparseGrid) -> Result<(TensorFile, TensorFile)> {
    let coords = grid.coords.iter().flat_map(|c| c.map(|v| v as f32)).collect();
    Ok((TensorFile::new(vec![grid.coords.len(), 3], coords)?, TensorFile::new(vec![grid.coords.len(), grid.channels], grid.data.clone())?))
}

pub fn save_png(image: &ImageRgb, path: &Path) -> Result<()> {
    let plane = image.width * image.height;
    let mut bytes = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            bytes.push((image.data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(image.width as u32, image.height as u32, bytes).expect("buffer matches the image size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Scene description written next to a synthetic scene's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub seed: u64,
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    pub voxel_size: f64,
    pub grid_origin: [f64; 3],
    pub grid_dims: [usize; 3],
    pub views: usize,
    pub points: usize,
    pub outliers: usize,
}

/// Write one box-world scene: a COLMAP model whose points are samples of the
/// true surface plus far outliers, images, toy features, ground-truth mesh
/// and occupancy.
pub fn synth_scene(dir: &Path, seed: u64, points: usize, outliers: usize) -> Result<SynthManifest> {
    let scene = gen_scene(seed);
    std::fs::create_dir_all(dir.join("images")).map_err(io_err(dir))?;
    let mut model = ColmapModel::default();
    let mut names = Vec::new();
    for (i, v) in scene.cameras.iter().enumerate() {
        let id = i as u32 + 1;
        let k = v.intrinsics;
        model.cameras.push(ColmapCamera { id, model: "PINHOLE".into(), width: k.width, height: k.height, fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy });
        let name = format!("view_{i:02}.png");
        model.images.push(image_from_pose(id, id, &name, &v.pose));
        if let Some(img) = &v.image {
            save_png(img, &dir.join("images").join(&name))?;
        }
        names.push(name);
    }
    let surf = sample_surface(&scene.mesh, points, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0c01_0a9f);
    let mut xyz = surf.points.clone();
    let diag = scene.room.diagonal();
    for _ in 0..outliers {
        let c = scene.room.center();
        xyz.push(std::array::from_fn(|a| c[a] + rng.gen_range(-2.0..2.0) * diag));
    }
    model.points = xyz
        .iter()
        .enumerate()
        .map(|(i, p)| ColmapPoint { id: i as u64 + 1, xyz: *p, rgb: [128; 3], error: 0.5, track: Vec::new() })
        .collect();
    write_colmap(dir.join("colmap"), &model)?;
    let maps: Vec<&FeatureMap> = scene.cameras.iter().map(|v| v.feature_map.as_deref().expect("toy views carry features")).collect();
    write_features(&dir.join("features"), &names, &maps)?;
    write_mesh(dir.join("gt_mesh.ply"), &scene.mesh, MeshFormat::Ply)?;
    write_tensor(dir.join("gt_occupancy.cgf"), &dense_to_tensor(&scene.occupancy)?)?;
    let spec = scene.grid();
    let manifest = SynthManifest {
        seed,
        room: scene.room,
        boxes: scene.boxes.clone(),
        voxel_size: spec.voxel_size,
        grid_origin: spec.origin,
        grid_dims: spec.dims,
        views: scene.cameras.len(),
        points,
        outliers,
    };
    write_json(&dir.join("scene.json"), &manifest)?;
    Ok(manifest)
}

/// Recompute toy features from images when no feature directory is given.
pub fn descriptor_features(images: &[ImageRgb]) -> Vec<FeatureMap> {
    images.iter().map(|im| toy_descriptor(im, PATCH)).collect()
}

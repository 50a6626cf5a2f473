use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::descriptor::{toy_descriptor, PATCH};
use crate::calibrate::SceneBounds;
use crate::chunker::{compute_chunk_edge, default_far, tile_on_lattice, ChunkLayout, Margin, DEFAULT_NEAR};
use crate::evalsuite::{raycast_render, Hit, Raycaster};
use crate::geometry::{project, Aabb, Axis, CameraIntrinsics, CameraView, DenseGrid, GridSpec, ImageRgb, RigidTransform, Vec3};
use crate::tensor_io::mesh::box_mesh;
use crate::tensor_io::MeshData;

pub const TOY_RESOLUTION: usize = 16;
pub const TOY_CAMERAS: usize = 16;
pub const TOY_IMAGE: (u32, u32) = (96, 72);
/// Latent channels: occupancy sign, then rgb mapped to [-1, 1].
pub const TOY_LATENT: usize = 4;
const WALL: f64 = 0.05;
const MIN_VISIBLE: f64 = 0.1;

/// Procedural box-world room: floor and four walls without a ceiling,
/// plus axis-aligned boxes resting on the floor.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub seed: u64,
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    pub layout: ChunkLayout,
    /// Surface voxels on the layout's lattice.
    pub occupancy: DenseGrid,
    /// Per-voxel rgb in [0, 1]; zero where unoccupied.
    pub color: DenseGrid,
    pub mesh: MeshData,
    pub cameras: Vec<CameraView>,
}

/// Cells whose closed extent meets the solid but are not strictly inside it.
fn shell_cells(solid: &Aabb, spec: &GridSpec, mut f: impl FnMut([usize; 3])) {
    let vs = spec.voxel_size;
    let range = |a: usize| {
        let lo = ((solid.min[a] - spec.origin[a]) / vs).floor().max(0.0) as usize;
        let hi = (((solid.max[a] - spec.origin[a]) / vs).ceil().max(0.0) as usize).min(spec.dims[a]);
        lo..hi
    };
    let inside = |c: [usize; 3], a: usize| {
        let (lo, hi) = (spec.origin[a] + c[a] as f64 * vs, spec.origin[a] + (c[a] + 1) as f64 * vs);
        (hi > solid.min[a] && lo < solid.max[a], lo > solid.min[a] && hi < solid.max[a])
    };
    for x in range(0) {
        for y in range(1) {
            for z in range(2) {
                let c = [x, y, z];
                let t = [inside(c, 0), inside(c, 1), inside(c, 2)];
                if t.iter().all(|p| p.0) && !t.iter().all(|p| p.1) {
                    f(c);
                }
            }
        }
    }
}

fn solids(room: &Aabb, boxes: &[Aabb]) -> Vec<Aabb> {
    let (x, y, z) = (room.max[0], room.max[1], room.max[2]);
    let mut s = vec![
        Aabb { min: [0.0, 0.0, 0.0], max: [x, WALL, z] },
        Aabb { min: [0.0, 0.0, 0.0], max: [WALL, y, z] },
        Aabb { min: [x - WALL, 0.0, 0.0], max: [x, y, z] },
        Aabb { min: [0.0, 0.0, 0.0], max: [x, y, WALL] },
        Aabb { min: [0.0, 0.0, z - WALL], max: [x, y, z] },
    ];
    s.extend_from_slice(boxes);
    s
}

impl ToyScene {
    pub fn grid(&self) -> &GridSpec {
        &self.occupancy.spec
    }

    pub fn occupied_centers(&self) -> Vec<Vec3> {
        let s = self.occupancy.spec;
        self.occupancy
            .channel(0)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(l, _)| s.center(s.unlinear(l)))
            .collect()
    }

    /// Ground-truth latent: occupancy as +-1 and rgb as `2c - 1` on occupied voxels.
    pub fn latent(&self) -> DenseGrid {
        let s = self.occupancy.spec;
        let n = s.num_voxels();
        let mut data = vec![0.0f32; TOY_LATENT * n];
        for l in 0..n {
            let occ = self.occupancy.data[l] > 0.0;
            data[l] = if occ { 1.0 } else { -1.0 };
            if occ {
                for c in 0..3 {
                    data[(1 + c) * n + l] = 2.0 * self.color.data[c * n + l] - 1.0;
                }
            }
        }
        DenseGrid { spec: s, channels: TOY_LATENT, data }
    }

    /// Drop the rendered images, keeping feature maps.
    pub fn strip_images(&mut self) {
        for c in &mut self.cameras {
            c.image = None;
        }
    }

    /// Flat per-voxel colour at a ray hit.
    pub fn shade(&self, p: &Vec3, dir: &Vec3) -> [f32; 3] {
        let s = &self.occupancy.spec;
        let probe = p + dir.normalize() * 1e-4;
        let base = s.locate(&probe).or_else(|| s.locate(p));
        let n = s.num_voxels();
        let mut best: Option<(f64, usize)> = None;
        if let Some(c) = base {
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let q = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                        if q.iter().zip(&s.dims).any(|(v, d)| *v < 0 || *v >= *d as i64) {
                            continue;
                        }
                        let q = q.map(|v| v as usize);
                        let l = s.linear(q);
                        if self.occupancy.data[l] > 0.0 {
                            let d = (s.center(q) - probe).norm_squared();
                            let key = if q == c { -1.0 } else { d };
                            if best.is_none_or(|b| key < b.0) {
                                best = Some((key, l));
                            }
                        }
                    }
                }
            }
        }
        match best {
            Some((_, l)) => std::array::from_fn(|k| self.color.data[k * n + l]),
            None => [0.5; 3],
        }
    }

    /// RGB render of the scene from `view` at its native resolution.
    pub fn render_rgb(&self, caster: &Raycaster, view: &CameraView) -> ImageRgb {
        let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
        let origin = view.center();
        let shader = |p: &Vec3, _: &Hit| self.shade(p, &(p - origin));
        let r = raycast_render(caster, view, (w, h), Some(&shader));
        let colors = r.color.expect("shaded render");
        let mut img = ImageRgb::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                if r.valid[y * w + x] {
                    for c in 0..3 {
                        img.set(c, y, x, colors[y * w + x][c]);
                    }
                }
            }
        }
        img
    }
}

/// Fraction of occupied voxel centers that `view` sees unoccluded. A voxel
/// counts as seen when the first hit along the ray to its center lies no
/// more than half a voxel diagonal in front of it.
pub fn visible_fraction(scene: &ToyScene, view: &CameraView, intersect: &(dyn Fn(&Vec3, &Vec3) -> Option<Hit> + Sync)) -> f64 {
    let centers = scene.occupied_centers();
    if centers.is_empty() {
        return 0.0;
    }
    let tol = 0.5 * 3f64.sqrt() * scene.grid().voxel_size;
    let o = view.center();
    let seen = centers
        .par_iter()
        .filter(|c| {
            if !project(view, c).valid {
                return false;
            }
            let d = *c - o;
            let dist = d.norm();
            let dir = d / dist;
            intersect(&o, &dir).is_none_or(|hit| hit.t >= dist - tol)
        })
        .count();
    seen as f64 / centers.len() as f64
}

fn color_in(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen_range(0.15..0.95))
}

/// Room and box geometry for `seed`, plus the generator to continue from.
fn sample_geometry(seed: u64) -> (Aabb, Vec<Aabb>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0c5);
    let (x, z) = (rng.gen_range(4.0..8.0), rng.gen_range(4.0..8.0));
    let y = rng.gen_range(2.5..4.0);
    let room = Aabb { min: [0.0; 3], max: [x, y, z] };
    let want = rng.gen_range(1..=6usize);
    let mut boxes: Vec<Aabb> = Vec::new();
    for _ in 0..want {
        for _attempt in 0..50 {
            let (w, d) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
            let h = rng.gen_range(0.4..(1.5f64).min(0.6 * y));
            let x0 = rng.gen_range(WALL + 0.2..x - WALL - 0.2 - w);
            let z0 = rng.gen_range(WALL + 0.2..z - WALL - 0.2 - d);
            let b = Aabb { min: [x0, WALL, z0], max: [x0 + w, WALL + h, z0 + d] };
            // keep a 0.2 m gap so box shells never merge
            let clear = boxes.iter().all(|o| [0, 2].iter().any(|&a| b.max[a] + 0.2 < o.min[a] || o.max[a] + 0.2 < b.min[a]));
            if clear {
                boxes.push(b);
                break;
            }
        }
    }
    (room, boxes, rng)
}

/// Deterministic box-world scene for `seed`.
pub fn gen_scene(seed: u64) -> ToyScene {
    let (room, boxes, mut rng) = sample_geometry(seed);
    let [x, y, z] = room.max;
    let bounds = SceneBounds::new(room, Axis::Y).expect("positive height");
    let edge = compute_chunk_edge(&bounds).expect("positive height");
    let mut layout = tile_on_lattice(&bounds, edge, Margin::default(), TOY_RESOLUTION).expect("valid tiling");
    let spec = layout.global_grid(1).expect("lattice layout");

    let mut occupancy = DenseGrid::zeros(spec, 1);
    let mut color = DenseGrid::zeros(spec, 3);
    let parts = solids(&room, &boxes);
    let bases: Vec<[f64; 3]> = parts.iter().map(|_| color_in(&mut rng)).collect();
    let mut mesh = MeshData::default();
    for (k, solid) in parts.iter().enumerate() {
        mesh.append(&box_mesh(solid.min.map(|v| v as f32), solid.max.map(|v| v as f32)));
        let mut cells = Vec::new();
        shell_cells(solid, &spec, |c| cells.push(c));
        for c in cells {
            // per-voxel brightness and tint give the views something to match
            let f = rng.gen_range(0.4..1.0);
            occupancy.set(0, c, 1.0);
            for ch in 0..3 {
                let v = bases[k][ch] * f + rng.gen_range(-0.12..0.12);
                color.set(ch, c, v.clamp(0.0, 1.0) as f32);
            }
        }
    }

    let mut scene = ToyScene { seed, room, boxes, layout: layout.clone(), occupancy, color, mesh, cameras: Vec::new() };
    let caster = Raycaster::new(&scene.mesh);
    let (w, h) = TOY_IMAGE;
    while scene.cameras.len() < TOY_CAMERAS {
        let fov = rng.gen_range(55.0f64..75.0).to_radians();
        let eye = Vec3::new(rng.gen_range(0.3..x - 0.3), rng.gen_range(1.0..(2.0f64).min(y - 0.3)), rng.gen_range(0.3..z - 0.3));
        if scene.boxes.iter().any(|b| b.inflate(0.3).contains(&eye)) {
            continue;
        }
        let target = Vec3::new(rng.gen_range(0.0..x), rng.gen_range(0.0..1.2), rng.gen_range(0.0..z));
        if (target - eye).norm() < 1.0 {
            continue;
        }
        let Ok(pose) = RigidTransform::look_at(eye, target, Vec3::y()) else { continue };
        let k = CameraIntrinsics::from_fov(fov, w, h).expect("valid fov");
        let view = CameraView::new(k, pose);
        if visible_fraction(&scene, &view, &|o, d| caster.intersect(o, d)) < MIN_VISIBLE {
            continue;
        }
        let img = scene.render_rgb(&caster, &view);
        let fm = toy_descriptor(&img, PATCH);
        scene.cameras.push(view.with_image(Arc::new(img)).with_feature_map(Arc::new(fm)));
    }
    layout.associate(&scene.cameras, DEFAULT_NEAR, default_far(&bounds));
    scene.layout = layout;
    scene
}

use rayon::prelude::*;

use crate::geometry::{CameraView, Vec3};
use crate::tensor_io::MeshData;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of vertices 1 and 2.
    pub u: f64,
    pub v: f64,
}

/// Moller-Trumbore ray/triangle intersection; hits with `t <= 1e-9` are ignored.
pub fn intersect_triangle(o: &Vec3, d: &Vec3, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some((t, u, v))
}

#[inline]
fn closer(t: f64, id: usize, best: &Option<Hit>) -> bool {
    match best {
        None => true,
        Some(b) => t < b.t || (t == b.t && id < b.triangle),
    }
}

#[derive(Debug, Clone)]
struct Node {
    min: [f64; 3],
    max: [f64; 3],
    /// Leaf: first index into `order`; inner: index of the left child (right = left + 1).
    start: usize,
    count: usize,
}

/// Bounding-volume hierarchy over mesh triangles. Returns the same hit as the
/// all-triangles intersector: nearest `t`, ties broken by lowest triangle id.
#[derive(Debug, Clone)]
pub struct Raycaster {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

const LEAF: usize = 4;

impl Raycaster {
    pub fn new(mesh: &MeshData) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len())
            .map(|i| mesh.triangle(i).map(Vec3::from))
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            nodes.push(Node { min: [0.0; 3], max: [0.0; 3], start: 0, count: tris.len() });
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (start, count) = (nodes[ni].start, nodes[ni].count);
                let mut min = [f64::INFINITY; 3];
                let mut max = [f64::NEG_INFINITY; 3];
                for &t in &order[start..start + count] {
                    for p in &tris[t] {
                        for a in 0..3 {
                            min[a] = min[a].min(p[a]);
                            max[a] = max[a].max(p[a]);
                        }
                    }
                }
                nodes[ni].min = min;
                nodes[ni].max = max;
                if count <= LEAF {
                    continue;
                }
                let mut cmin = [f64::INFINITY; 3];
                let mut cmax = [f64::NEG_INFINITY; 3];
                for &t in &order[start..start + count] {
                    for a in 0..3 {
                        cmin[a] = cmin[a].min(centroids[t][a]);
                        cmax[a] = cmax[a].max(centroids[t][a]);
                    }
                }
                let axis = (0..3).max_by(|&a, &b| (cmax[a] - cmin[a]).total_cmp(&(cmax[b] - cmin[b]))).unwrap();
                order[start..start + count]
                    .sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
                let half = count / 2;
                let left = nodes.len();
                nodes.push(Node { min, max, start, count: half });
                nodes.push(Node { min, max, start: start + half, count: count - half });
                nodes[ni].start = left;
                nodes[ni].count = 0;
                stack.push(left);
                stack.push(left + 1);
            }
        }
        Self { tris, nodes, order }
    }

    pub fn num_triangles(&self) -> usize {
        self.tris.len()
    }

    fn slab(&self, n: &Node, o: &Vec3, inv: &Vec3) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let (mut ta, mut tb) = ((n.min[a] - o[a]) * inv[a], (n.max[a] - o[a]) * inv[a]);
            if ta.is_nan() || tb.is_nan() {
                // ray parallel to and on the slab plane
                if o[a] < n.min[a] || o[a] > n.max[a] {
                    return None;
                }
                continue;
            }
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        // widen slightly so boxes touching a hit are never pruned by round-off
        let eps = 1e-9 * (1.0 + t1.abs());
        (t0 <= t1 + eps).then_some(t0 - eps)
    }

    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni];
            let Some(tn) = self.slab(n, o, &inv) else { continue };
            if best.is_some_and(|b| tn > b.t) {
                continue;
            }
            if n.count > 0 {
                for &id in &self.order[n.start..n.start + n.count] {
                    if let Some((t, u, v)) = intersect_triangle(o, d, &self.tris[id]) {
                        if closer(t, id, &best) {
                            best = Some(Hit { t, triangle: id, u, v });
                        }
                    }
                }
            } else {
                stack.push(n.start + 1);
                stack.push(n.start);
            }
        }
        best
    }

    /// Reference intersector testing every triangle.
    pub fn intersect_brute(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best = None;
        for (id, tri) in self.tris.iter().enumerate() {
            if let Some((t, u, v)) = intersect_triangle(o, d, tri) {
                if closer(t, id, &best) {
                    best = Some(Hit { t, triangle: id, u, v });
                }
            }
        }
        best
    }

    pub fn triangle(&self, i: usize) -> &[Vec3; 3] {
        &self.tris[i]
    }
}

/// Depth and normal maps with a per-pixel validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    /// Camera-frame z of the hit.
    pub depth: Vec<f64>,
    /// Unit geometric normal in the camera frame, facing the camera.
    pub normal: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    /// Optional per-pixel colour in [0, 1].
    pub color: Option<Vec<[f32; 3]>>,
}

impl RenderedView {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            normal: vec![[0.0; 3]; width * height],
            valid: vec![false; width * height],
            color: None,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-pixel shading callback: world hit point, hit record.
pub type Shader<'a> = dyn Fn(&Vec3, &Hit) -> [f32; 3] + Sync + 'a;

/// Cast one ray through each pixel center. `resolution` rescales the
/// view's intrinsics when it differs from the native image size.
pub fn raycast_render(caster: &Raycaster, view: &CameraView, resolution: (usize, usize), shader: Option<&Shader<'_>>) -> RenderedView {
    let (w, h) = resolution;
    let k = &view.intrinsics;
    let sx = w as f64 / k.width as f64;
    let sy = h as f64 / k.height as f64;
    let (fx, fy, cx, cy) = (k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy);
    let rot = *view.pose.rotation();
    let origin = *view.pose.translation();
    let rows: Vec<Vec<(f64, [f64; 3], bool, [f32; 3])>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dc = Vec3::new((x as f64 + 0.5 - cx) / fx, (y as f64 + 0.5 - cy) / fy, 1.0);
                    let dw = rot * dc;
                    match caster.intersect(&origin, &dw) {
                        None => (0.0, [0.0; 3], false, [0.0; 3]),
                        Some(hit) => {
                            let tri = caster.triangle(hit.triangle);
                            let nw = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                            let mut nc = rot.transpose() * nw;
                            let len = nc.norm();
                            if len > 0.0 {
                                nc /= len;
                            }
                            if nc.dot(&dc) > 0.0 {
                                nc = -nc;
                            }
                            let col = shader.map_or([0.0; 3], |s| s(&(origin + dw * hit.t), &hit));
                            (hit.t, [nc.x, nc.y, nc.z], true, col)
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut out = RenderedView::empty(w, h);
    let mut colors = vec![[0.0f32; 3]; w * h];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (t, n, ok, c)) in row.into_iter().enumerate() {
            let i = y * w + x;
            // the direction has unit camera z, so t is the camera-frame depth
            out.depth[i] = t;
            out.normal[i] = n;
            out.valid[i] = ok;
            colors[i] = c;
        }
    }
    if shader.is_some() {
        out.color = Some(colors);
    }
    out
}

/// Shader interpolating the mesh's vertex colours.
pub fn vertex_color_shader(mesh: &MeshData) -> Option<impl Fn(&Vec3, &Hit) -> [f32; 3] + Sync + '_> {
    let colors = mesh.colors.as_ref()?;
    Some(move |_: &Vec3, hit: &Hit| {
        let t = mesh.triangles[hit.triangle];
        let w = [1.0 - hit.u - hit.v, hit.u, hit.v];
        std::array::from_fn(|c| (0..3).map(|k| w[k] as f32 * colors[t[k] as usize][c]).sum())
    })
}

use std::collections::HashMap;

use super::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use crate::tensor_io::MeshData;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Isosurface of a scalar field sampled at `origin + i * spacing`
/// (z fastest), with vertices shared between neighbouring cells.
///
/// Triangles are wound counter-clockwise seen from the side where the field
/// is below `level`.
pub fn marching_cubes(values: &[f32], dims: [usize; 3], origin: [f64; 3], spacing: f64, level: f32) -> MeshData {
    let idx = |p: [usize; 3]| (p[0] * dims[1] + p[1]) * dims[2] + p[2];
    let mut vertices: Vec<[f32; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_ids: HashMap<(usize, usize), u32> = HashMap::new();
    if dims.iter().any(|&d| d < 2) {
        return MeshData::default();
    }
    for x in 0..dims[0] - 1 {
        for y in 0..dims[1] - 1 {
            for z in 0..dims[2] - 1 {
                let pts = CORNERS.map(|c| [x + c[0], y + c[1], z + c[2]]);
                let vals = pts.map(|p| values[idx(p)]);
                let mut cube = 0usize;
                for (i, v) in vals.iter().enumerate() {
                    if *v < level {
                        cube |= 1 << i;
                    }
                }
                let mask = EDGE_TABLE[cube];
                if mask == 0 {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let (pa, pb) = (pts[*a], pts[*b]);
                    let (lo, hi) = if idx(pa) < idx(pb) { (pa, pb) } else { (pb, pa) };
                    let axis = (0..3).find(|&k| lo[k] != hi[k]).unwrap();
                    let key = (idx(lo), axis);
                    local[e] = *edge_ids.entry(key).or_insert_with(|| {
                        let (va, vb) = (values[idx(lo)], values[idx(hi)]);
                        let f = if (vb - va).abs() > 0.0 { ((level - va) / (vb - va)) as f64 } else { 0.5 };
                        let p: [f32; 3] = std::array::from_fn(|k| {
                            let a = origin[k] + lo[k] as f64 * spacing;
                            let b = origin[k] + hi[k] as f64 * spacing;
                            (a + f * (b - a)) as f32
                        });
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[cube].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [local[tri[0] as usize], local[tri[1] as usize], local[tri[2] as usize]];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        triangles.push(t);
                    }
                }
            }
        }
    }
    MeshData { vertices, triangles, colors: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal(m: &MeshData, t: &[u32; 3]) -> [f64; 3] {
        let p = t.map(|i| m.vertices[i as usize].map(|c| c as f64));
        let u = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
        let v = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
        [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    }

    #[test]
    fn single_voxel_is_closed_and_outward() {
        let mut vals = vec![0.0f32; 27];
        vals[13] = 1.0;
        let m = marching_cubes(&vals, [3, 3, 3], [0.0; 3], 1.0, 0.5);
        assert_eq!(m.vertices.len(), 6);
        assert_eq!(m.triangles.len(), 8);
        for t in &m.triangles {
            let n = normal(&m, t);
            let c: [f64; 3] = std::array::from_fn(|k| t.iter().map(|&i| m.vertices[i as usize][k] as f64).sum::<f64>() / 3.0 - 1.0);
            assert!(n[0] * c[0] + n[1] * c[1] + n[2] * c[2] > 0.0);
        }
        // every edge shared by exactly two triangles
        let mut edges = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                *edges.entry((a, b)).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn empty_and_constant_fields() {
        assert!(marching_cubes(&[0.0; 8], [2, 2, 2], [0.0; 3], 1.0, 0.5).is_empty());
        assert!(marching_cubes(&[1.0; 8], [2, 2, 2], [0.0; 3], 1.0, 0.5).is_empty());
    }
}

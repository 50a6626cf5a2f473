use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

/// Spatial header shared by dense and sparse grids.
///
/// Voxel `(i, j, k)` spans `origin + [i, i+1) * voxel_size` on each axis; its
/// position is the cell center `origin + (i + 0.5) * voxel_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::Input(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    #[inline]
    pub fn unlinear(&self, mut n: usize) -> [usize; 3] {
        let k = n % self.dims[2];
        n /= self.dims[2];
        let j = n % self.dims[1];
        [n / self.dims[1], j, k]
    }

    #[inline]
    pub fn center(&self, c: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + (c[0] as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (c[1] as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (c[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|i| c[i] < self.dims[i])
    }

    /// Voxel index containing world point `p`, if inside the grid.
    pub fn locate(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.voxel_size).floor();
            if f < 0.0 || f >= self.dims[i] as f64 {
                return None;
            }
            out[i] = f as usize;
        }
        Some(out)
    }

    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.origin[i] + self.dims[i] as f64 * self.voxel_size)
    }

    /// Sub-grid header for the index box starting at `offset`.
    pub fn sub(&self, offset: [usize; 3], dims: [usize; 3]) -> GridSpec {
        GridSpec {
            origin: std::array::from_fn(|i| self.origin[i] + offset[i] as f64 * self.voxel_size),
            voxel_size: self.voxel_size,
            dims,
        }
    }

    /// Same extent at `factor` times the resolution.
    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            origin: self.origin,
            voxel_size: self.voxel_size / factor as f64,
            dims: self.dims.map(|d| d * factor),
        }
    }

    pub fn iter_coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.num_voxels()).map(move |n| self.unlinear(n))
    }
}

/// Dense voxel grid with channel-major storage `[channels][nx][ny][nz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub spec: GridSpec,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl DenseGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![0.0; spec.num_voxels() * channels],
        }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != spec.num_voxels() * channels {
            return Err(Error::Shape(format!(
                "dense grid {:?} x {channels} needs {} values, got {}",
                spec.dims,
                spec.num_voxels() * channels,
                data.len()
            )));
        }
        Ok(Self { spec, channels, data })
    }

    #[inline]
    pub fn get(&self, c: usize, v: [usize; 3]) -> f32 {
        self.data[c * self.spec.num_voxels() + self.spec.linear(v)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, v: [usize; 3], val: f32) {
        let n = self.spec.num_voxels();
        let l = self.spec.linear(v);
        self.data[c * n + l] = val;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spec.num_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copy of the index box `[offset, offset + dims)`; cells outside `self`
    /// are zero.
    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> DenseGrid {
        let sub = self.spec.sub(offset, dims);
        let mut out = DenseGrid::zeros(sub, self.channels);
        let n_in = self.spec.num_voxels();
        let n_out = sub.num_voxels();
        let d = self.spec.dims;
        for c in 0..self.channels {
            for i in 0..dims[0] {
                let gi = offset[0] + i;
                if gi >= d[0] {
                    break;
                }
                for j in 0..dims[1] {
                    let gj = offset[1] + j;
                    if gj >= d[1] {
                        break;
                    }
                    let kmax = dims[2].min(d[2].saturating_sub(offset[2]));
                    let src = c * n_in + self.spec.linear([gi, gj, offset[2]]);
                    let dst = c * n_out + sub.linear([i, j, 0]);
                    out.data[dst..dst + kmax].copy_from_slice(&self.data[src..src + kmax]);
                }
            }
        }
        out
    }

    /// Keeps voxels with any nonzero channel.
    pub fn to_sparse(&self) -> SparseGrid {
        let n = self.spec.num_voxels();
        let mut coords = Vec::new();
        let mut data = Vec::new();
        for l in 0..n {
            if (0..self.channels).any(|c| self.data[c * n + l] != 0.0) {
                let v = self.spec.unlinear(l);
                coords.push([v[0] as u32, v[1] as u32, v[2] as u32]);
                data.extend((0..self.channels).map(|c| self.data[c * n + l]));
            }
        }
        SparseGrid {
            spec: self.spec,
            channels: self.channels,
            coords,
            data,
        }
    }
}

/// Sparse voxel grid: strictly sorted unique coordinates with voxel-major
/// data `[|coords|][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    pub spec: GridSpec,
    pub channels: usize,
    pub coords: Vec<[u32; 3]>,
    pub data: Vec<f32>,
}

impl SparseGrid {
    pub fn new(spec: GridSpec, channels: usize, coords: Vec<[u32; 3]>, data: Vec<f32>) -> Result<Self> {
        if data.len() != coords.len() * channels {
            return Err(Error::Shape(format!(
                "sparse grid with {} coords x {channels} channels needs {} values, got {}",
                coords.len(),
                coords.len() * channels,
                data.len()
            )));
        }
        for w in coords.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Input(format!("sparse coords not strictly sorted at {:?}", w[1])));
            }
        }
        if let Some(c) = coords.iter().find(|c| !spec.contains(c.map(|v| v as usize))) {
            return Err(Error::Input(format!("sparse coord {c:?} outside dims {:?}", spec.dims)));
        }
        Ok(Self {
            spec,
            channels,
            coords,
            data,
        })
    }

    pub fn zeros(spec: GridSpec, channels: usize, coords: Vec<[u32; 3]>) -> Result<Self> {
        let n = coords.len() * channels;
        Self::new(spec, channels, coords, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn voxel(&self, n: usize) -> &[f32] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn find(&self, c: [u32; 3]) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    pub fn to_dense(&self) -> DenseGrid {
        let mut out = DenseGrid::zeros(self.spec, self.channels);
        let n = self.spec.num_voxels();
        for (idx, c) in self.coords.iter().enumerate() {
            let l = self.spec.linear(c.map(|v| v as usize));
            for ch in 0..self.channels {
                out.data[ch * n + l] = self.data[idx * self.channels + ch];
            }
        }
        out
    }

    /// Entries inside the index box, re-based to the box origin.
    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> SparseGrid {
        let sub = self.spec.sub(offset, dims);
        let mut coords = Vec::new();
        let mut data = Vec::new();
        for (idx, c) in self.coords.iter().enumerate() {
            let inside = (0..3).all(|a| (c[a] as usize) >= offset[a] && (c[a] as usize) < offset[a] + dims[a]);
            if inside {
                coords.push(std::array::from_fn(|a| c[a] - offset[a] as u32));
                data.extend_from_slice(self.voxel(idx));
            }
        }
        SparseGrid {
            spec: sub,
            channels: self.channels,
            coords,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_index_round_trip() {
        let s = GridSpec::new([0.0; 3], 1.0, [3, 4, 5]).unwrap();
        for n in 0..s.num_voxels() {
            assert_eq!(s.linear(s.unlinear(n)), n);
        }
        assert_eq!(s.center([0, 0, 0]), Vec3::new(0.5, 0.5, 0.5));
        assert_eq!(s.locate(&Vec3::new(2.9, 0.1, 4.99)), Some([2, 0, 4]));
        assert_eq!(s.locate(&Vec3::new(3.0, 0.1, 0.0)), None);
    }

    #[test]
    fn crop_copies_sub_box() {
        let s = GridSpec::new([0.0; 3], 0.5, [4, 4, 4]).unwrap();
        let mut g = DenseGrid::zeros(s, 2);
        for (l, v) in g.data.iter_mut().enumerate() {
            *v = l as f32;
        }
        let c = g.crop([1, 2, 0], [2, 2, 4]);
        assert_eq!(c.spec.origin, [0.5, 1.0, 0.0]);
        assert_eq!(c.get(1, [1, 1, 3]), g.get(1, [2, 3, 3]));
        let full = g.crop([0; 3], [4, 4, 4]);
        assert_eq!(full, g);
    }

    #[test]
    fn crop_past_edge_zero_fills() {
        let s = GridSpec::new([0.0; 3], 1.0, [2, 2, 2]).unwrap();
        let g = DenseGrid::from_data(s, 1, vec![1.0; 8]).unwrap();
        let c = g.crop([1, 1, 1], [2, 2, 2]);
        assert_eq!(c.data.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn sparse_rejects_unsorted() {
        let s = GridSpec::new([0.0; 3], 1.0, [2, 2, 2]).unwrap();
        assert!(SparseGrid::new(s, 1, vec![[1, 0, 0], [0, 0, 0]], vec![1.0, 1.0]).is_err());
        assert!(SparseGrid::new(s, 1, vec![[0, 0, 2]], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn densify_sparsify_round_trip(mask in prop::collection::vec(any::<bool>(), 60), vals in prop::collection::vec(0.1f32..5.0, 60)) {
            let s = GridSpec::new([0.0; 3], 1.0, [3, 4, 5]).unwrap();
            let mut coords = Vec::new();
            let mut data = Vec::new();
            for n in 0..60 {
                if mask[n] {
                    let c = s.unlinear(n);
                    coords.push([c[0] as u32, c[1] as u32, c[2] as u32]);
                    data.push(vals[n]);
                    data.push(-vals[n]);
                }
            }
            let sp = SparseGrid::new(s, 2, coords, data).unwrap();
            let back = sp.to_dense().to_sparse();
            prop_assert_eq!(back, sp);
        }
    }
}

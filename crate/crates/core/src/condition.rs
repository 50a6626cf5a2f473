//! Lifting per-view feature maps into voxel grids and permutation-invariant
//! aggregation into a 3D condition grid.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_mask, Chunk, IndexBox};
use crate::error::{Error, Result};
use crate::geometry::{project, CameraView, DenseGrid, GridSpec, Interpolation, SparseGrid, Vec3};
use crate::nn::{silu, silu_grad, Linear, ParamSet, Real};
use crate::tensor_io::{write_tensor, TensorFile};

const BLOCK: usize = 256;

/// Voxels to lift: a full dense box or an explicit sorted coordinate list.
#[derive(Debug, Clone, Copy)]
pub enum Voxels<'a> {
    Dense(&'a GridSpec),
    Sparse(&'a GridSpec, &'a [[u32; 3]]),
}

impl Voxels<'_> {
    pub fn spec(&self) -> &GridSpec {
        match self {
            Voxels::Dense(s) | Voxels::Sparse(s, _) => s,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Voxels::Dense(s) => s.num_voxels(),
            Voxels::Sparse(_, c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, n: usize) -> [usize; 3] {
        match self {
            Voxels::Dense(s) => s.unlinear(n),
            Voxels::Sparse(_, c) => c[n].map(|v| v as usize),
        }
    }
}

/// One view's features lifted onto a voxel set, voxel-major `[voxel][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerViewGrid {
    pub channels: usize,
    pub features: Vec<f32>,
    pub valid: Vec<bool>,
}

impl PerViewGrid {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    #[inline]
    pub fn feature(&self, n: usize) -> &[f32] {
        &self.features[n * self.channels..(n + 1) * self.channels]
    }

    /// Restrict to a subset of voxel indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PerViewGrid {
        let mut features = Vec::with_capacity(indices.len() * self.channels);
        let mut valid = Vec::with_capacity(indices.len());
        for &n in indices {
            features.extend_from_slice(self.feature(n));
            valid.push(self.valid[n]);
        }
        PerViewGrid { channels: self.channels, features, valid }
    }
}

/// Sample the view's feature map at the projection of every voxel center.
///
/// Voxel centers are taken in the chunk frame and moved to the world by `t_c`.
pub fn lift_view(view: &CameraView, voxels: Voxels<'_>, t_c: &Vec3, interp: Interpolation) -> Result<PerViewGrid> {
    let fm = view
        .feature_map
        .as_ref()
        .ok_or_else(|| Error::Input("view has no feature map to lift".into()))?;
    let d = fm.channels;
    let spec = voxels.spec();
    let n = voxels.len();
    let mut features = vec![0.0f32; n * d];
    let mut valid = vec![false; n];
    features
        .par_chunks_mut(BLOCK * d)
        .zip(valid.par_chunks_mut(BLOCK))
        .enumerate()
        .for_each(|(b, (fchunk, vchunk))| {
            for (k, ok) in vchunk.iter_mut().enumerate() {
                let x = spec.center(voxels.coord(b * BLOCK + k)) + t_c;
                let p = project(view, &x);
                if p.valid {
                    *ok = true;
                    fm.sample_into(p.u, p.v, interp, &mut fchunk[k * d..(k + 1) * d]);
                }
            }
        });
    Ok(PerViewGrid { channels: d, features, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Statistics and softmax over the views that see the voxel.
    #[default]
    ValidOnly,
    /// Every view contributes, with zero features where it does not see the voxel.
    AllViews,
}

/// Feature MLP (3 layers) and weight MLP (2 layers) sharing the input `[f, mu, var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub feat1: Linear<T>,
    pub feat2: Linear<T>,
    pub feat3: Linear<T>,
    pub weight1: Linear<T>,
    pub weight2: Linear<T>,
}

impl<T: Real> AggregatorParams<T> {
    /// He-uniform hidden layers; the feature MLP's last layer is exactly zero.
    pub fn init(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let he = 6f64.sqrt();
        Self {
            dim,
            hidden,
            feat1: Linear::random(hidden, 3 * dim, true, he, 3 * dim, rng),
            feat2: Linear::random(hidden, hidden, true, he, hidden, rng),
            feat3: Linear::zeros(dim, hidden, true),
            weight1: Linear::random(hidden, 3 * dim, true, he, 3 * dim, rng),
            weight2: Linear::random(1, hidden, true, 1.0, hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            hidden: self.hidden,
            feat1: self.feat1.zeros_like(),
            feat2: self.feat2.zeros_like(),
            feat3: self.feat3.zeros_like(),
            weight1: self.weight1.zeros_like(),
            weight2: self.weight2.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.feat1.add_assign(&o.feat1);
        self.feat2.add_assign(&o.feat2);
        self.feat3.add_assign(&o.feat3);
        self.weight1.add_assign(&o.weight1);
        self.weight2.add_assign(&o.weight2);
    }

    pub fn cast<U: Real>(&self) -> AggregatorParams<U> {
        AggregatorParams {
            dim: self.dim,
            hidden: self.hidden,
            feat1: self.feat1.cast(),
            feat2: self.feat2.cast(),
            feat3: self.feat3.cast(),
            weight1: self.weight1.cast(),
            weight2: self.weight2.cast(),
        }
    }
}

impl<T: Real> ParamSet<T> for AggregatorParams<T> {
    fn layers(&self) -> Vec<(&'static str, &Linear<T>)> {
        vec![
            ("agg.feat1", &self.feat1),
            ("agg.feat2", &self.feat2),
            ("agg.feat3", &self.feat3),
            ("agg.weight1", &self.weight1),
            ("agg.weight2", &self.weight2),
        ]
    }

    fn layers_mut(&mut self) -> Vec<(&'static str, &mut Linear<T>)> {
        vec![
            ("agg.feat1", &mut self.feat1),
            ("agg.feat2", &mut self.feat2),
            ("agg.feat3", &mut self.feat3),
            ("agg.weight1", &mut self.weight1),
            ("agg.weight2", &mut self.weight2),
        ]
    }
}

/// Per-voxel forward state for the views taking part.
struct VoxelPass<T> {
    n: usize,
    mu: Vec<f64>,
    /// Per view: concatenated input `[f, mu, var]`.
    x: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    fp: Vec<T>,
    c1: Vec<T>,
    alpha: Vec<f64>,
}

/// First-layer pre-activation using the split `W_f f + (W_mu mu + W_var var + b)`.
fn first_layer<T: Real>(l: &Linear<T>, d: usize, x: &[T], shared: &[T], out: &mut [T]) {
    for o in 0..l.out_dim {
        let row = &l.row(o)[..d];
        let mut acc = shared[o];
        for (w, xi) in row.iter().zip(&x[..d]) {
            acc += *w * *xi;
        }
        out[o] = acc;
    }
}

fn shared_part<T: Real>(l: &Linear<T>, d: usize, stats: &[T]) -> Vec<T> {
    (0..l.out_dim)
        .map(|o| {
            let mut acc = l.bias[o];
            for (w, s) in l.row(o)[d..].iter().zip(stats) {
                acc += *w * *s;
            }
            acc
        })
        .collect()
}

impl<T: Real> AggregatorParams<T> {
    fn voxel_forward(&self, views: &[Option<&[f32]>]) -> VoxelPass<T> {
        let d = self.dim;
        let h = self.hidden;
        let n = views.len();
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for f in views.iter().flatten() {
            for c in 0..d {
                let v = f[c] as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        let nf = n as f64;
        let mu: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let var: Vec<f64> = (0..d).map(|c| (sq[c] / nf - mu[c] * mu[c]).max(0.0)).collect();
        let stats: Vec<T> = mu.iter().chain(&var).map(|&v| T::of(v)).collect();
        let s_feat = shared_part(&self.feat1, d, &stats);
        let s_weight = shared_part(&self.weight1, d, &stats);

        let mut x = vec![T::zero(); n * 3 * d];
        let mut a1 = vec![T::zero(); n * h];
        let mut a2 = vec![T::zero(); n * h];
        let mut fp = vec![T::zero(); n * d];
        let mut c1 = vec![T::zero(); n * h];
        let mut logits = vec![0.0f64; n];
        let mut h1 = vec![T::zero(); h];
        let mut h2 = vec![T::zero(); h];
        let mut wout = [T::zero()];
        for (i, f) in views.iter().enumerate() {
            let xi = &mut x[i * 3 * d..(i + 1) * 3 * d];
            if let Some(f) = f {
                for c in 0..d {
                    xi[c] = T::of(f[c] as f64);
                }
            }
            xi[d..].copy_from_slice(&stats);
            let a1i = &mut a1[i * h..(i + 1) * h];
            first_layer(&self.feat1, d, xi, &s_feat, a1i);
            for (o, a) in h1.iter_mut().zip(a1i.iter()) {
                *o = silu(*a);
            }
            let a2i = &mut a2[i * h..(i + 1) * h];
            self.feat2.forward(&h1, a2i);
            for (o, a) in h2.iter_mut().zip(a2i.iter()) {
                *o = silu(*a);
            }
            self.feat3.forward(&h2, &mut fp[i * d..(i + 1) * d]);
            let c1i = &mut c1[i * h..(i + 1) * h];
            first_layer(&self.weight1, d, xi, &s_weight, c1i);
            for (o, a) in h1.iter_mut().zip(c1i.iter()) {
                *o = silu(*a);
            }
            self.weight2.forward(&h1, &mut wout);
            logits[i] = wout[0].f64();
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let alpha = e.iter().map(|v| v / z).collect();
        VoxelPass { n, mu, x, a1, a2, fp, c1, alpha }
    }

    fn voxel_output(&self, p: &VoxelPass<T>, out: &mut [T]) {
        let d = self.dim;
        for c in 0..d {
            let mut acc = p.mu[c];
            for i in 0..p.n {
                acc += p.alpha[i] * p.fp[i * d + c].f64();
            }
            out[c] = T::of(acc);
        }
    }

    fn voxel_backward(&self, p: &VoxelPass<T>, g: &[T], grad: &mut Self) {
        let d = self.dim;
        let h = self.hidden;
        // dL/dalpha_i = g . f'_i, then through the softmax
        let gf: Vec<f64> = (0..p.n)
            .map(|i| (0..d).map(|c| g[c].f64() * p.fp[i * d + c].f64()).sum())
            .collect();
        let mean_gf: f64 = (0..p.n).map(|i| p.alpha[i] * gf[i]).sum();
        let mut h1 = vec![T::zero(); h];
        let mut h2 = vec![T::zero(); h];
        let mut dfp = vec![T::zero(); d];
        let mut dh2 = vec![T::zero(); h];
        let mut da2 = vec![T::zero(); h];
        let mut dh1 = vec![T::zero(); h];
        let mut da1 = vec![T::zero(); h];
        for i in 0..p.n {
            let xi = &p.x[i * 3 * d..(i + 1) * 3 * d];
            let a1i = &p.a1[i * h..(i + 1) * h];
            let a2i = &p.a2[i * h..(i + 1) * h];
            for k in 0..h {
                h1[k] = silu(a1i[k]);
                h2[k] = silu(a2i[k]);
            }
            let ai = T::of(p.alpha[i]);
            for c in 0..d {
                dfp[c] = ai * g[c];
            }
            dh2.fill(T::zero());
            self.feat3.backward(&h2, &dfp, &mut grad.feat3, Some(&mut dh2));
            for k in 0..h {
                da2[k] = dh2[k] * silu_grad(a2i[k]);
            }
            dh1.fill(T::zero());
            self.feat2.backward(&h1, &da2, &mut grad.feat2, Some(&mut dh1));
            for k in 0..h {
                da1[k] = dh1[k] * silu_grad(a1i[k]);
            }
            self.feat1.backward(xi, &da1, &mut grad.feat1, None);

            let dw = T::of(p.alpha[i] * (gf[i] - mean_gf));
            let c1i = &p.c1[i * h..(i + 1) * h];
            for k in 0..h {
                h1[k] = silu(c1i[k]);
            }
            dh1.fill(T::zero());
            self.weight2.backward(&h1, &[dw], &mut grad.weight2, Some(&mut dh1));
            for k in 0..h {
                da1[k] = dh1[k] * silu_grad(c1i[k]);
            }
            self.weight1.backward(xi, &da1, &mut grad.weight1, None);
        }
    }
}

fn check_views(views: &[&PerViewGrid], dim: usize) -> Result<usize> {
    let first = views.first().ok_or_else(|| Error::Input("aggregation needs at least one view".into()))?;
    let n = first.len();
    for v in views {
        if v.len() != n || v.channels != dim || v.features.len() != n * dim {
            return Err(Error::Shape(format!(
                "per-view grid mismatch: expected {n} voxels x {dim} channels, got {} x {}",
                v.len(),
                v.channels
            )));
        }
    }
    Ok(n)
}

fn gather<'a>(views: &[&'a PerViewGrid], n: usize, mode: StatsMode, buf: &mut Vec<Option<&'a [f32]>>) -> u32 {
    buf.clear();
    let mut cov = 0;
    for v in views {
        if v.valid[n] {
            cov += 1;
            buf.push(Some(v.feature(n)));
        } else if mode == StatsMode::AllViews {
            buf.push(None);
        }
    }
    cov
}

/// Aggregated features (voxel-major) and per-voxel coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated<T> {
    pub features: Vec<T>,
    pub coverage: Vec<u32>,
}

pub fn aggregate_raw<T: Real>(views: &[&PerViewGrid], params: &AggregatorParams<T>, mode: StatsMode) -> Result<Aggregated<T>> {
    let d = params.dim;
    let n = check_views(views, d)?;
    let mut features = vec![T::zero(); n * d];
    let mut coverage = vec![0u32; n];
    features
        .par_chunks_mut(BLOCK * d)
        .zip(coverage.par_chunks_mut(BLOCK))
        .enumerate()
        .for_each(|(b, (fchunk, cchunk))| {
            let mut buf = Vec::with_capacity(views.len());
            for (k, cov) in cchunk.iter_mut().enumerate() {
                *cov = gather(views, b * BLOCK + k, mode, &mut buf);
                if *cov == 0 {
                    continue;
                }
                let pass = params.voxel_forward(&buf);
                params.voxel_output(&pass, &mut fchunk[k * d..(k + 1) * d]);
            }
        });
    Ok(Aggregated { features, coverage })
}

/// Parameter gradients of `sum(grad_out * aggregate(views))`.
///
/// Per-block partial sums are reduced in block order, so the result does not
/// depend on the thread count.
pub fn aggregate_backward<T: Real>(
    views: &[&PerViewGrid],
    params: &AggregatorParams<T>,
    mode: StatsMode,
    grad_out: &[T],
) -> Result<AggregatorParams<T>> {
    let d = params.dim;
    let n = check_views(views, d)?;
    if grad_out.len() != n * d {
        return Err(Error::Shape(format!("aggregate gradient has {} values, expected {}", grad_out.len(), n * d)));
    }
    let partials: Vec<AggregatorParams<T>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut grad = params.zeros_like();
            let mut buf = Vec::with_capacity(views.len());
            for v in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let g = &grad_out[v * d..(v + 1) * d];
                if g.iter().all(|x| *x == T::zero()) || gather(views, v, mode, &mut buf) == 0 {
                    continue;
                }
                let pass = params.voxel_forward(&buf);
                params.voxel_backward(&pass, g, &mut grad);
            }
            grad
        })
        .collect();
    let mut total = params.zeros_like();
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Dense(DenseGrid),
    Sparse(SparseGrid),
}

/// Aggregated condition with per-voxel count of contributing views
/// (dense linear order or sparse entry order).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGrid {
    pub grid: GridData,
    pub coverage: Vec<u32>,
}

impl ConditionGrid {
    pub fn spec(&self) -> &GridSpec {
        match &self.grid {
            GridData::Dense(g) => &g.spec,
            GridData::Sparse(g) => &g.spec,
        }
    }

    pub fn channels(&self) -> usize {
        match &self.grid {
            GridData::Dense(g) => g.channels,
            GridData::Sparse(g) => g.channels,
        }
    }

    /// Build from voxel-major aggregated features over `voxels`.
    pub fn from_aggregated(voxels: Voxels<'_>, channels: usize, agg: &Aggregated<f32>) -> Result<Self> {
        match voxels {
            Voxels::Dense(spec) => {
                let nv = spec.num_voxels();
                let mut data = vec![0.0f32; nv * channels];
                for v in 0..nv {
                    for c in 0..channels {
                        data[c * nv + v] = agg.features[v * channels + c];
                    }
                }
                Ok(Self { grid: GridData::Dense(DenseGrid::from_data(*spec, channels, data)?), coverage: agg.coverage.clone() })
            }
            Voxels::Sparse(spec, coords) => Ok(Self {
                grid: GridData::Sparse(SparseGrid::new(*spec, channels, coords.to_vec(), agg.features.clone())?),
                coverage: agg.coverage.clone(),
            }),
        }
    }

    /// Index-exact crop of the box; sparse entries are re-based to the box origin.
    pub fn crop_box(&self, b: &IndexBox) -> ConditionGrid {
        match &self.grid {
            GridData::Dense(g) => {
                let out = g.crop(b.min, b.size);
                let mut coverage = vec![0u32; out.spec.num_voxels()];
                for (l, cov) in coverage.iter_mut().enumerate() {
                    let c = out.spec.unlinear(l);
                    let gc: [usize; 3] = std::array::from_fn(|a| c[a] + b.min[a]);
                    if g.spec.contains(gc) {
                        *cov = self.coverage[g.spec.linear(gc)];
                    }
                }
                ConditionGrid { grid: GridData::Dense(out), coverage }
            }
            GridData::Sparse(g) => {
                let out = g.crop(b.min, b.size);
                let coverage = g
                    .coords
                    .iter()
                    .zip(&self.coverage)
                    .filter(|(c, _)| b.contains(c.map(|v| v as usize)))
                    .map(|(_, &cov)| cov)
                    .collect();
                ConditionGrid { grid: GridData::Sparse(out), coverage }
            }
        }
    }

    /// Dense channel-major view of the condition; empty sparse cells are zero.
    pub fn to_dense(&self) -> DenseGrid {
        match &self.grid {
            GridData::Dense(g) => g.clone(),
            GridData::Sparse(g) => g.to_dense(),
        }
    }

    /// Write as CGF1 tensors: dense `[C,nx,ny,nz]` plus coverage, or sparse
    /// coords `[N,3]` plus data `[N,C]` and coverage `[N]`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let cov: Vec<f32> = self.coverage.iter().map(|&c| c as f32).collect();
        match &self.grid {
            GridData::Dense(g) => {
                let d = g.spec.dims;
                write_tensor(dir.join(format!("{stem}.cgf")), &TensorFile::new(vec![g.channels, d[0], d[1], d[2]], g.data.clone())?)?;
                write_tensor(dir.join(format!("{stem}_coverage.cgf")), &TensorFile::new(vec![1, d[0], d[1], d[2]], cov)?)?;
            }
            GridData::Sparse(g) => {
                let n = g.len().max(1);
                let mut coords: Vec<f32> = g.coords.iter().flat_map(|c| c.map(|v| v as f32)).collect();
                let mut data = g.data.clone();
                let mut cov = cov;
                if g.is_empty() {
                    coords = vec![0.0; 3];
                    data = vec![0.0; g.channels];
                    cov = vec![0.0];
                }
                write_tensor(dir.join(format!("{stem}_coords.cgf")), &TensorFile::new(vec![n, 3], coords)?)?;
                write_tensor(dir.join(format!("{stem}.cgf")), &TensorFile::new(vec![n, g.channels], data)?)?;
                write_tensor(dir.join(format!("{stem}_coverage.cgf")), &TensorFile::new(vec![n], cov)?)?;
            }
        }
        Ok(())
    }
}

/// Lift every view over `voxels` (world frame) and aggregate.
pub fn build_global_condition(
    views: &[CameraView],
    voxels: Voxels<'_>,
    params: &AggregatorParams<f32>,
    mode: StatsMode,
    interp: Interpolation,
) -> Result<ConditionGrid> {
    if views.is_empty() {
        return Err(Error::Input("global condition needs at least one view".into()));
    }
    let lifted = views
        .iter()
        .map(|v| lift_view(v, voxels, &Vec3::zeros(), interp))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PerViewGrid> = lifted.iter().collect();
    let agg = aggregate_raw(&refs, params, mode)?;
    ConditionGrid::from_aggregated(voxels, params.dim, &agg)
}

/// Crop the global condition to a lattice-aligned chunk.
pub fn crop_condition(global: &ConditionGrid, chunk: &Chunk) -> Result<ConditionGrid> {
    let b = chunk_mask(chunk, global.spec())?;
    Ok(global.crop_box(&b))
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::{Denoiser, LatentCrop};
use crate::geometry::{Axis, DenseGrid};
use crate::nn::{silu, silu_grad, Linear, ParamSet, Real};

pub const TIME_FEATURES: usize = 8;
pub const TAPS: usize = 27;
pub const MAX_BLOCKS: usize = 8;

const BLOCK_NAMES: [[&str; 3]; MAX_BLOCKS] = [
    ["block0.lin", "block0.conv", "block0.cond"],
    ["block1.lin", "block1.conv", "block1.cond"],
    ["block2.lin", "block2.conv", "block2.cond"],
    ["block3.lin", "block3.conv", "block3.cond"],
    ["block4.lin", "block4.conv", "block4.cond"],
    ["block5.lin", "block5.conv", "block5.cond"],
    ["block6.lin", "block6.conv", "block6.cond"],
    ["block7.lin", "block7.conv", "block7.cond"],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub up_axis: Axis,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: super::TOY_LATENT, cond_channels: super::DESCRIPTOR_DIM, hidden: 32, blocks: 4, up_axis: Axis::Y }
    }
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_channels + TIME_FEATURES + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden == 0 || self.blocks == 0 || self.blocks > MAX_BLOCKS {
            return Err(Error::Parameter(format!("invalid denoiser config {self:?} (blocks must be 1..={MAX_BLOCKS})")));
        }
        Ok(())
    }
}

/// One residual block: per-voxel affine, depthwise 3x3x3 mixing, SiLU, and a
/// zero-initialized projection of the condition added to the residual stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub lin: Linear<T>,
    /// Row `c` holds the 27 taps of channel `c`; bias per channel.
    pub conv: Linear<T>,
    pub cond: Linear<T>,
}

/// Small convolutional velocity predictor over a voxel crop.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser<T> {
    pub config: DenoiserConfig,
    pub input: Linear<T>,
    pub blocks: Vec<Block<T>>,
    pub output: Linear<T>,
}

impl<T: Real> ToyDenoiser<T> {
    pub fn init(config: DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (h, d) = (config.hidden, config.cond_channels);
        let gain = 6f64.sqrt();
        let input = Linear::random(h, config.input_dim(), true, gain, config.input_dim(), rng);
        let blocks = (0..config.blocks)
            .map(|_| {
                let lin = Linear::random(h, h, true, gain, h, rng);
                let conv = Linear::random(h, TAPS, true, 3f64.sqrt(), TAPS, rng);
                Block { lin, conv, cond: Linear::zeros(h, d, false) }
            })
            .collect();
        let output = Linear::random(config.latent_channels, h, true, 3f64.sqrt(), h * config.blocks, rng);
        Ok(Self { config, input, blocks, output })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            input: self.input.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block { lin: b.lin.zeros_like(), conv: b.conv.zeros_like(), cond: b.cond.zeros_like() })
                .collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> ToyDenoiser<U> {
        ToyDenoiser {
            config: self.config,
            input: self.input.cast(),
            blocks: self.blocks.iter().map(|b| Block { lin: b.lin.cast(), conv: b.conv.cast(), cond: b.cond.cast() }).collect(),
            output: self.output.cast(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for ((_, a), (_, b)) in self.layers_mut().into_iter().zip(o.layers()) {
            a.add_assign(b);
        }
    }
}

impl<T: Real> ParamSet<T> for ToyDenoiser<T> {
    fn layers(&self) -> Vec<(&'static str, &Linear<T>)> {
        let mut v = vec![("input", &self.input)];
        for (k, b) in self.blocks.iter().enumerate() {
            let n = BLOCK_NAMES[k];
            v.extend([(n[0], &b.lin), (n[1], &b.conv), (n[2], &b.cond)]);
        }
        v.push(("output", &self.output));
        v
    }

    fn layers_mut(&mut self) -> Vec<(&'static str, &mut Linear<T>)> {
        let mut v = vec![("input", &mut self.input)];
        for (k, b) in self.blocks.iter_mut().enumerate() {
            let n = BLOCK_NAMES[k];
            v.extend([(n[0], &mut b.lin), (n[1], &mut b.conv), (n[2], &mut b.cond)]);
        }
        v.push(("output", &mut self.output));
        v
    }
}

/// Sinusoidal features of the flow time.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    std::array::from_fn(|k| {
        let w = std::f64::consts::PI * (1u32 << (k / 2)) as f64;
        if k % 2 == 0 {
            (w * t).sin()
        } else {
            (w * t).cos()
        }
    })
}

/// Neighbour table of a dense crop: 27 linear indices per voxel (`u32::MAX`
/// when outside the crop or masked out). Tap `o` and `26 - o` are opposite.
pub fn neighbor_table(dims: [usize; 3], mask: Option<&[bool]>) -> Vec<[u32; TAPS]> {
    let n = dims[0] * dims[1] * dims[2];
    let live = |l: usize| mask.is_none_or(|m| m[l]);
    let mut table = vec![[u32::MAX; TAPS]; n];
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let l = (x * dims[1] + y) * dims[2] + z;
                let mut o = 0;
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            let q = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                            if q.iter().zip(&dims).all(|(v, d)| *v >= 0 && *v < *d as i64) {
                                let ql = ((q[0] as usize) * dims[1] + q[1] as usize) * dims[2] + q[2] as usize;
                                if live(ql) {
                                    table[l][o] = ql as u32;
                                }
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
    }
    table
}

/// Inputs of one forward pass, voxel-major.
pub struct ForwardInput<'a, T> {
    pub dims: [usize; 3],
    pub z: &'a [T],
    pub t: f64,
    pub cond: Option<&'a [T]>,
    pub mask: Option<&'a [bool]>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    pub x: Vec<T>,
    /// Residual stream before each block and after the last.
    pub h: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
    pub out: Vec<T>,
    neighbors: Vec<[u32; TAPS]>,
    live: Vec<bool>,
}

fn transpose<T: Real>(l: &Linear<T>) -> Vec<T> {
    let mut t = vec![T::zero(); l.weight.len()];
    for o in 0..l.out_dim {
        for i in 0..l.in_dim {
            t[i * l.out_dim + o] = l.weight[o * l.in_dim + i];
        }
    }
    t
}

/// `y = W x + b` using the transposed weights, as a sum of scaled columns.
#[inline]
fn affine<T: Real>(wt: &[T], bias: &[T], x: &[T], y: &mut [T]) {
    if bias.is_empty() {
        y.fill(T::zero());
    } else {
        y.copy_from_slice(bias);
    }
    let out = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (yo, w) in y.iter_mut().zip(&wt[i * out..(i + 1) * out]) {
            *yo += xi * *w;
        }
    }
}

impl<T: Real> ToyDenoiser<T> {
    fn check(&self, inp: &ForwardInput<'_, T>) -> Result<usize> {
        let n = inp.dims.iter().product::<usize>();
        let c = &self.config;
        if inp.z.len() != n * c.latent_channels {
            return Err(Error::Shape(format!("latent has {} values, expected {}", inp.z.len(), n * c.latent_channels)));
        }
        if let Some(g) = inp.cond {
            if g.len() != n * c.cond_channels {
                return Err(Error::Shape(format!("condition has {} values, expected {}", g.len(), n * c.cond_channels)));
            }
        }
        if inp.mask.is_some_and(|m| m.len() != n) {
            return Err(Error::Shape("mask length differs from voxel count".into()));
        }
        Ok(n)
    }

    pub fn forward(&self, inp: &ForwardInput<'_, T>) -> Result<ForwardCache<T>> {
        let n = self.check(inp)?;
        let cfg = &self.config;
        let (hd, cl, din) = (cfg.hidden, cfg.latent_channels, cfg.input_dim());
        let up = cfg.up_axis.index();
        let tf = time_features(inp.t);
        let live: Vec<bool> = (0..n).map(|l| inp.mask.is_none_or(|m| m[l])).collect();
        let mut x = vec![T::zero(); n * din];
        for l in 0..n {
            let row = &mut x[l * din..(l + 1) * din];
            row[..cl].copy_from_slice(&inp.z[l * cl..(l + 1) * cl]);
            for (k, f) in tf.iter().enumerate() {
                row[cl + k] = T::of(*f);
            }
            let c = [l / (inp.dims[1] * inp.dims[2]), (l / inp.dims[2]) % inp.dims[1], l % inp.dims[2]];
            row[din - 1] = T::of((c[up] as f64 + 0.5) / inp.dims[up] as f64 - 0.5);
        }
        let neighbors = neighbor_table(inp.dims, inp.mask);
        let wt_in = transpose(&self.input);
        let mut h0 = vec![T::zero(); n * hd];
        for l in 0..n {
            if live[l] {
                affine(&wt_in, &self.input.bias, &x[l * din..(l + 1) * din], &mut h0[l * hd..(l + 1) * hd]);
            }
        }
        let mut hs = vec![h0];
        let (mut as_, mut pres) = (Vec::new(), Vec::new());
        for b in &self.blocks {
            let h = hs.last().unwrap();
            let wt = transpose(&b.lin);
            let ct = transpose(&b.conv);
            let pt = transpose(&b.cond);
            let mut a = vec![T::zero(); n * hd];
            for l in 0..n {
                if live[l] {
                    affine(&wt, &b.lin.bias, &h[l * hd..(l + 1) * hd], &mut a[l * hd..(l + 1) * hd]);
                }
            }
            let mut pre = vec![T::zero(); n * hd];
            let mut next = vec![T::zero(); n * hd];
            for l in 0..n {
                if !live[l] {
                    continue;
                }
                let p = &mut pre[l * hd..(l + 1) * hd];
                p.copy_from_slice(&b.conv.bias);
                for (o, &q) in neighbors[l].iter().enumerate() {
                    if q == u32::MAX {
                        continue;
                    }
                    let q = q as usize;
                    for ((pc, w), av) in p.iter_mut().zip(&ct[o * hd..(o + 1) * hd]).zip(&a[q * hd..(q + 1) * hd]) {
                        *pc += *w * *av;
                    }
                }
                let out = &mut next[l * hd..(l + 1) * hd];
                for ((o, hv), pv) in out.iter_mut().zip(&h[l * hd..(l + 1) * hd]).zip(p.iter()) {
                    *o = *hv + silu(*pv);
                }
                if let Some(g) = inp.cond {
                    let dc = cfg.cond_channels;
                    for (k, &gv) in g[l * dc..(l + 1) * dc].iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        for (o, w) in out.iter_mut().zip(&pt[k * hd..(k + 1) * hd]) {
                            *o += gv * *w;
                        }
                    }
                }
            }
            as_.push(a);
            pres.push(pre);
            hs.push(next);
        }
        let wt_out = transpose(&self.output);
        let last = hs.last().unwrap();
        let mut out = vec![T::zero(); n * cl];
        for l in 0..n {
            if live[l] {
                affine(&wt_out, &self.output.bias, &last[l * hd..(l + 1) * hd], &mut out[l * cl..(l + 1) * cl]);
            }
        }
        Ok(ForwardCache { x, h: hs, a: as_, pre: pres, out, neighbors, live })
    }

    /// Parameter gradients for upstream gradient `dout` (voxel-major, like
    /// `cache.out`), plus the gradient with respect to the condition when one was used.
    pub fn backward(&self, inp: &ForwardInput<'_, T>, cache: &ForwardCache<T>, dout: &[T]) -> (ToyDenoiser<T>, Option<Vec<T>>) {
        let cfg = &self.config;
        let (hd, cl, din, dc) = (cfg.hidden, cfg.latent_channels, cfg.input_dim(), cfg.cond_channels);
        let n = cache.live.len();
        let mut grad = self.zeros_like();
        let mut dg = inp.cond.map(|_| vec![T::zero(); n * dc]);
        let last = cache.h.last().unwrap();
        let mut dh = vec![T::zero(); n * hd];
        for l in 0..n {
            if cache.live[l] {
                self.output.backward(
                    &last[l * hd..(l + 1) * hd],
                    &dout[l * cl..(l + 1) * cl],
                    &mut grad.output,
                    Some(&mut dh[l * hd..(l + 1) * hd]),
                );
            }
        }
        for (k, b) in self.blocks.iter().enumerate().rev() {
            let (h, a, pre) = (&cache.h[k], &cache.a[k], &cache.pre[k]);
            let gb = &mut grad.blocks[k];
            // dh is the gradient of the block output; masked voxels carry none
            let mut dpre = vec![T::zero(); n * hd];
            for l in 0..n {
                if !cache.live[l] {
                    continue;
                }
                let g = &dh[l * hd..(l + 1) * hd];
                if let (Some(cond), Some(dg)) = (inp.cond, dg.as_mut()) {
                    b.cond.backward(&cond[l * dc..(l + 1) * dc], g, &mut gb.cond, Some(&mut dg[l * dc..(l + 1) * dc]));
                }
                for ((d, gv), p) in dpre[l * hd..(l + 1) * hd].iter_mut().zip(g).zip(&pre[l * hd..(l + 1) * hd]) {
                    *d = *gv * silu_grad(*p);
                }
            }
            // depthwise conv: weights, bias, and gradient into `a`
            let ct = transpose(&b.conv);
            let mut dct = vec![T::zero(); TAPS * hd];
            let mut da = vec![T::zero(); n * hd];
            for l in 0..n {
                if !cache.live[l] {
                    continue;
                }
                let dp = &dpre[l * hd..(l + 1) * hd];
                for (bias, d) in gb.conv.bias.iter_mut().zip(dp) {
                    *bias += *d;
                }
                for (o, &q) in cache.neighbors[l].iter().enumerate() {
                    if q == u32::MAX {
                        continue;
                    }
                    let q = q as usize;
                    for ((w, d), av) in dct[o * hd..(o + 1) * hd].iter_mut().zip(dp).zip(&a[q * hd..(q + 1) * hd]) {
                        *w += *d * *av;
                    }
                }
                let dal = &mut da[l * hd..(l + 1) * hd];
                for (o, &q) in cache.neighbors[l].iter().enumerate() {
                    if q == u32::MAX {
                        continue;
                    }
                    // voxel q reads voxel l through the opposite tap
                    let q = q as usize;
                    let w = &ct[(TAPS - 1 - o) * hd..(TAPS - o) * hd];
                    for ((d, wv), dq) in dal.iter_mut().zip(w).zip(&dpre[q * hd..(q + 1) * hd]) {
                        *d += *wv * *dq;
                    }
                }
            }
            for o in 0..TAPS {
                for c in 0..hd {
                    gb.conv.weight[c * TAPS + o] += dct[o * hd + c];
                }
            }
            // per-voxel affine; the residual path passes dh through unchanged
            for l in 0..n {
                if cache.live[l] {
                    let (dl, dhl) = (&da[l * hd..(l + 1) * hd], &mut dh[l * hd..(l + 1) * hd]);
                    b.lin.backward(&h[l * hd..(l + 1) * hd], dl, &mut gb.lin, Some(dhl));
                }
            }
        }
        for l in 0..n {
            if cache.live[l] {
                self.input.backward(&cache.x[l * din..(l + 1) * din], &dh[l * hd..(l + 1) * hd], &mut grad.input, None);
            }
        }
        (grad, dg)
    }
}

/// Channel-major `[C][N]` to voxel-major `[N][C]`.
pub fn to_voxel_major<T: Real>(data: &[f32], channels: usize) -> Vec<T> {
    let n = data.len() / channels.max(1);
    let mut out = vec![T::zero(); data.len()];
    for c in 0..channels {
        for l in 0..n {
            out[l * channels + c] = T::of(data[c * n + l] as f64);
        }
    }
    out
}

/// Voxel-major `[N][C]` to channel-major `[C][N]`.
pub fn to_channel_major<T: Real>(data: &[T], channels: usize, out: &mut [f32]) {
    let n = data.len() / channels.max(1);
    for l in 0..n {
        for c in 0..channels {
            out[c * n + l] = data[l * channels + c].f64() as f32;
        }
    }
}

impl Denoiser for ToyDenoiser<f32> {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn predict_velocity(&self, z: &LatentCrop<'_>, t: f64, cond: Option<&DenseGrid>, out: &mut [f32]) -> Result<()> {
        let zv: Vec<f32> = to_voxel_major(z.data, z.channels);
        let gv: Option<Vec<f32>> = match cond {
            Some(g) => {
                if g.spec.dims != z.spec.dims || g.channels != self.config.cond_channels {
                    return Err(Error::Shape(format!(
                        "condition grid {:?}x{} does not match latent crop {:?}x{}",
                        g.spec.dims, g.channels, z.spec.dims, self.config.cond_channels
                    )));
                }
                Some(to_voxel_major(&g.data, g.channels))
            }
            None => None,
        };
        let inp = ForwardInput { dims: z.spec.dims, z: &zv, t, cond: gv.as_deref(), mask: z.mask };
        let cache = self.forward(&inp)?;
        to_channel_major(&cache.out, z.channels, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DenoiserConfig {
        DenoiserConfig { latent_channels: 2, cond_channels: 3, hidden: 5, blocks: 2, up_axis: Axis::Y }
    }

    fn randomize<T: Real>(m: &mut ToyDenoiser<T>, rng: &mut ChaCha8Rng) {
        for (_, l) in m.layers_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = T::of(rng.gen_range(-0.5..0.5));
            }
        }
    }

    fn loss(m: &ToyDenoiser<f64>, inp: &ForwardInput<'_, f64>, target: &[f64]) -> f64 {
        let c = m.forward(inp).unwrap();
        c.out.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = ToyDenoiser::<f64>::init(small(), &mut rng).unwrap();
        randomize(&mut m, &mut rng);
        let dims = [3, 2, 3];
        let n = 18;
        let z: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|l| l % 5 != 2).collect();
        let inp = ForwardInput { dims, z: &z, t: 0.3, cond: Some(&g), mask: Some(&mask) };
        let c = m.forward(&inp).unwrap();
        let dout: Vec<f64> = c.out.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let (grad, dg) = m.backward(&inp, &c, &dout);
        let flat = m.flat();
        let gflat = grad.flat();
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut p = m.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.set_flat(&v);
            let lp = loss(&p, &inp, &target);
            v[i] -= 2.0 * h;
            p.set_flat(&v);
            let lm = loss(&p, &inp, &target);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", gflat[i]);
        }
        let dg = dg.unwrap();
        for i in 0..g.len() {
            let mut gp = g.clone();
            gp[i] += h;
            let lp = loss(&m, &ForwardInput { cond: Some(&gp), ..inp }, &target);
            gp[i] -= 2.0 * h;
            let lm = loss(&m, &ForwardInput { cond: Some(&gp), ..inp }, &target);
            assert!(((lp - lm) / (2.0 * h) - dg[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_init_ignores_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ToyDenoiser::<f32>::init(DenoiserConfig::default(), &mut rng).unwrap();
        let dims = [4, 4, 4];
        let z: Vec<f32> = (0..64 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..64 * 14).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = m.forward(&ForwardInput { dims, z: &z, t: 0.4, cond: Some(&g), mask: None }).unwrap();
        let b = m.forward(&ForwardInput { dims, z: &z, t: 0.4, cond: None, mask: None }).unwrap();
        assert_eq!(a.out, b.out);
    }

    #[test]
    fn receptive_field_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = ToyDenoiser::<f64>::init(small(), &mut rng).unwrap();
        randomize(&mut m, &mut rng);
        let dims = [9, 9, 9];
        let n = 729;
        let z: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = m.forward(&ForwardInput { dims, z: &z, t: 0.5, cond: None, mask: None }).unwrap().out;
        // perturb the corner voxel: with 2 blocks only voxels within 2 steps change
        let mut z2 = z.clone();
        z2[0] += 1.0;
        let moved = m.forward(&ForwardInput { dims, z: &z2, t: 0.5, cond: None, mask: None }).unwrap().out;
        for l in 0..n {
            let c = [l / 81, (l / 9) % 9, l % 9];
            let changed = (0..2).any(|k| base[l * 2 + k] != moved[l * 2 + k]);
            if c.iter().any(|&v| v > 2) {
                assert!(!changed, "{c:?}");
            }
        }
    }

    #[test]
    fn masked_voxels_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = ToyDenoiser::<f64>::init(small(), &mut rng).unwrap();
        randomize(&mut m, &mut rng);
        let dims = [3, 3, 3];
        let mask: Vec<bool> = (0..27).map(|l| l != 13).collect();
        let z: Vec<f64> = (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = m.forward(&ForwardInput { dims, z: &z, t: 0.5, cond: None, mask: Some(&mask) }).unwrap().out;
        let mut z2 = z.clone();
        z2[26] = 100.0;
        let b = m.forward(&ForwardInput { dims, z: &z2, t: 0.5, cond: None, mask: Some(&mask) }).unwrap().out;
        assert_eq!(a, b);
    }

    #[test]
    fn layout_round_trip() {
        let cm: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let vm: Vec<f32> = to_voxel_major(&cm, 3);
        assert_eq!(&vm[..3], &[0.0, 4.0, 8.0]);
        let mut back = vec![0.0; 12];
        to_channel_major(&vm, 3, &mut back);
        assert_eq!(back, cm);
    }
}

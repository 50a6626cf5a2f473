use std::io::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{to_voxel_major, DenoiserConfig, ForwardInput, ToyDenoiser};
use super::scene::ToyScene;
use crate::chunker::chunk_mask;
use crate::condition::{aggregate_backward, aggregate_raw, lift_view, AggregatorParams, PerViewGrid, StatsMode, Voxels};
use crate::error::{Error, Result};
use crate::geometry::{Interpolation, Vec3};
use crate::nn::{ParamSet, Real};

const DIVERGENCE_LOSS: f64 = 1e3;
const DIVERGENCE_STEPS: usize = 100;

/// Parameter update rule; both use the cosine-decayed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Momentum-free gradient descent.
    Sgd,
    /// Adam with beta1 0.9, beta2 0.999, epsilon 1e-8.
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub steps: usize,
    /// Chunks per step.
    pub batch: usize,
    pub learning_rate: f64,
    pub cond_dropout: f64,
    pub min_views: usize,
    pub max_views: usize,
    pub seed: u64,
    pub denoiser: DenoiserConfig,
    pub aggregator_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            steps: 4000,
            batch: 2,
            learning_rate: 3e-3,
            cond_dropout: 0.1,
            min_views: 1,
            max_views: 16,
            seed: 0,
            denoiser: DenoiserConfig::default(),
            aggregator_hidden: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::Parameter(format!("condition dropout must lie in [0, 1], got {}", self.cond_dropout)));
        }
        if self.min_views == 0 || self.min_views > self.max_views {
            return Err(Error::Parameter(format!("invalid view range {}..={}", self.min_views, self.max_views)));
        }
        if self.batch == 0 {
            return Err(Error::Parameter("batch must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.aggregator_hidden == 0 {
            return Err(Error::Parameter("aggregator hidden width must be positive".into()));
        }
        self.denoiser.validate()
    }
}

/// Denoiser plus condition aggregator, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub denoiser: ToyDenoiser<T>,
    pub aggregator: AggregatorParams<T>,
}

impl<T: Real> ToyModel<T> {
    pub fn init(config: DenoiserConfig, aggregator_hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let denoiser = ToyDenoiser::init(config, rng)?;
        let aggregator = AggregatorParams::init(config.cond_channels, aggregator_hidden, rng);
        Ok(Self { denoiser, aggregator })
    }

    pub fn cast<U: Real>(&self) -> ToyModel<U> {
        ToyModel { denoiser: self.denoiser.cast(), aggregator: self.aggregator.cast() }
    }

    pub fn num_params(&self) -> usize {
        self.denoiser.num_params() + self.aggregator.num_params()
    }

    pub fn flat(&self) -> Vec<T> {
        let mut v = self.denoiser.flat();
        v.extend(self.aggregator.flat());
        v
    }

    pub fn set_flat(&mut self, v: &[T]) {
        let k = self.denoiser.num_params();
        self.denoiser.set_flat(&v[..k]);
        self.aggregator.set_flat(&v[k..]);
    }
}

/// One training chunk: noisy latent, velocity target and lifted views (voxel-major).
#[derive(Debug, Clone)]
pub struct Example {
    pub dims: [usize; 3],
    pub t: f64,
    pub z_t: Vec<f32>,
    pub target: Vec<f32>,
    /// Empty when the condition is dropped.
    pub views: Vec<PerViewGrid>,
}

/// Loss and gradients of the mean squared velocity error for one example.
pub fn example_loss_grad<T: Real>(model: &ToyModel<T>, ex: &Example) -> Result<(f64, ToyModel<T>)> {
    let refs: Vec<&PerViewGrid> = ex.views.iter().collect();
    let g = if refs.is_empty() { None } else { Some(aggregate_raw(&refs, &model.aggregator, StatsMode::ValidOnly)?.features) };
    let z: Vec<T> = ex.z_t.iter().map(|v| T::of(*v as f64)).collect();
    let inp = ForwardInput { dims: ex.dims, z: &z, t: ex.t, cond: g.as_deref(), mask: None };
    let cache = model.denoiser.forward(&inp)?;
    let scale = 1.0 / ex.target.len() as f64;
    let mut loss = 0.0;
    let dout: Vec<T> = cache
        .out
        .iter()
        .zip(&ex.target)
        .map(|(v, y)| {
            let e = v.f64() - *y as f64;
            loss += e * e;
            T::of(2.0 * e * scale)
        })
        .collect();
    let (dden, dg) = model.denoiser.backward(&inp, &cache, &dout);
    let dagg = match dg {
        Some(dg) => aggregate_backward(&refs, &model.aggregator, StatsMode::ValidOnly, &dg)?,
        None => model.aggregator.zeros_like(),
    };
    Ok((loss * scale, ToyModel { denoiser: dden, aggregator: dagg }))
}

/// Loss only.
pub fn example_loss<T: Real>(model: &ToyModel<T>, ex: &Example) -> Result<f64> {
    let refs: Vec<&PerViewGrid> = ex.views.iter().collect();
    let g = if refs.is_empty() { None } else { Some(aggregate_raw(&refs, &model.aggregator, StatsMode::ValidOnly)?.features) };
    let z: Vec<T> = ex.z_t.iter().map(|v| T::of(*v as f64)).collect();
    let out = model.denoiser.forward(&ForwardInput { dims: ex.dims, z: &z, t: ex.t, cond: g.as_deref(), mask: None })?.out;
    Ok(out.iter().zip(&ex.target).map(|(v, y)| (v.f64() - *y as f64).powi(2)).sum::<f64>() / ex.target.len() as f64)
}

/// Lift `views` of `scene` over the voxels of chunk `chunk`.
pub fn lift_chunk_views(scene: &ToyScene, chunk: usize, views: &[usize]) -> Result<Vec<PerViewGrid>> {
    let c = &scene.layout.chunks[chunk];
    let b = chunk_mask(c, scene.grid())?;
    let spec = scene.grid().sub(b.min, b.size);
    views
        .iter()
        .map(|&v| lift_view(&scene.cameras[v], Voxels::Dense(&spec), &Vec3::zeros(), Interpolation::Bilinear))
        .collect()
}

/// Ground-truth latent of a chunk, voxel-major.
pub fn chunk_latent(scene: &ToyScene, chunk: usize) -> Result<(Vec<f32>, [usize; 3])> {
    let b = chunk_mask(&scene.layout.chunks[chunk], scene.grid())?;
    let crop = scene.latent().crop(b.min, b.size);
    Ok((to_voxel_major(&crop.data, crop.channels), b.size))
}

pub fn draw_example(scenes: &[ToyScene], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Example> {
    let scene = &scenes[rng.gen_range(0..scenes.len())];
    let chunk = rng.gen_range(0..scene.layout.chunks.len());
    let (z1, dims) = chunk_latent(scene, chunk)?;
    let candidates = &scene.layout.chunks[chunk].views;
    let k = rng.gen_range(cfg.min_views..=cfg.max_views).min(candidates.len());
    let dropped = rng.gen_bool(cfg.cond_dropout);
    let chosen: Vec<usize> = sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    let views = if dropped || chosen.is_empty() { Vec::new() } else { lift_chunk_views(scene, chunk, &chosen)? };
    let t: f64 = rng.gen();
    let mut z_t = Vec::with_capacity(z1.len());
    let mut target = Vec::with_capacity(z1.len());
    for &x in &z1 {
        let e: f32 = rng.sample(StandardNormal);
        z_t.push((t * x as f64 + (1.0 - t) * e as f64) as f32);
        target.push(x - e);
    }
    Ok(Example { dims, t, z_t, target, views })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ToyModel<f32>,
    pub losses: Vec<f64>,
}

fn cosine_lr(base: f64, step: usize, steps: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / steps.max(1) as f64).cos())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Turn the raw gradient into the step direction in place.
    fn direction(&mut self, grad: &mut [f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((g, m), v) in grad.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * *g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * *g * *g;
            *g = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Gradient-based training with cosine decay on the flow-matching loss.
pub fn train(scenes: &[ToyScene], mut model: ToyModel<f32>, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Precondition("training needs at least one scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut bad = 0usize;
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(model.num_params()));
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch).map(|_| draw_example(scenes, cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
        let results = batch.par_iter().map(|ex| example_loss_grad(&model, ex)).collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut grad = flat_zeros(&model);
        for (l, g) in &results {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g.flat()) {
                *a += b as f64;
            }
        }
        loss /= cfg.batch as f64;
        losses.push(loss);
        if !(loss <= DIVERGENCE_LOSS) {
            bad += 1;
            if bad >= DIVERGENCE_STEPS {
                return Err(Error::Training(format!("loss above {DIVERGENCE_LOSS} for {DIVERGENCE_STEPS} consecutive steps (step {step})")));
            }
        } else {
            bad = 0;
        }
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
        for g in &mut grad {
            *g /= cfg.batch as f64;
        }
        if let Some(a) = adam.as_mut() {
            a.direction(&mut grad);
        }
        if lr > 0.0 {
            let scale = lr;
            let updated: Vec<f32> = model.flat().iter().zip(&grad).map(|(p, g)| (*p as f64 - scale * g) as f32).collect();
            model.set_flat(&updated);
        }
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::info!("step {step}: loss {loss:.5} lr {lr:.4}");
        }
    }
    Ok(TrainOutput { model, losses })
}

fn flat_zeros(model: &ToyModel<f32>) -> Vec<f64> {
    vec![0.0; model.num_params()]
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,loss").map_err(io)?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{i},{l}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Small random probe: a 4x4x4 latent and two partially valid views.
pub fn probe_example(config: &DenoiserConfig, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [4, 4, 4];
    let n = 64;
    let d = config.cond_channels;
    let views = (0..2)
        .map(|_| {
            let valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            let features = (0..n * d).map(|k| if valid[k / d] { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            PerViewGrid { channels: d, features, valid }
        })
        .collect();
    let c = config.latent_channels;
    Example {
        dims,
        t: rng.gen_range(0.1..0.9),
        z_t: (0..n * c).map(|_| rng.sample(StandardNormal)).collect(),
        target: (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        views,
    }
}

/// Compare analytic gradients with central differences (step `h`) on at
/// least `min_params` parameters, drawn from every layer. Errors are
/// relative to `max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(model: &ToyModel<f64>, ex: &Example, min_params: usize, h: f64, seed: u64) -> Result<GradCheck> {
    let (_, grad) = example_loss_grad(model, ex)?;
    let analytic = grad.flat();
    let base = model.flat();
    let mut sizes: Vec<usize> = model.denoiser.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).collect();
    sizes.extend(model.aggregator.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()));
    let per_layer = min_params.div_ceil(sizes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::new();
    let mut offset = 0;
    for &s in &sizes {
        for i in sample(&mut rng, s, per_layer.min(s)) {
            picks.push(offset + i);
        }
        offset += s;
    }
    // small layers take fewer than their share; top up from the whole set
    let mut taken: std::collections::HashSet<usize> = picks.iter().copied().collect();
    let target = min_params.min(base.len());
    while picks.len() < target {
        let i = rng.gen_range(0..base.len());
        if taken.insert(i) {
            picks.push(i);
        }
    }
    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    for &i in &picks {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.set_flat(&v);
        let lp = example_loss(&probe, ex)?;
        v[i] = base[i] - h;
        probe.set_flat(&v);
        let lm = example_loss(&probe, ex)?;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheck { max_rel_error: max_rel, checked: picks.len() })
}

/// Fresh parameters with every layer, including the zero-initialized ones, perturbed.
pub fn random_point(config: DenoiserConfig, aggregator_hidden: usize, seed: u64) -> Result<ToyModel<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ToyModel::<f64>::init(config, aggregator_hidden, &mut rng)?;
    let v: Vec<f64> = m.flat().iter().map(|p| p + rng.gen_range(-0.2..0.2)).collect();
    m.set_flat(&v);
    Ok(m)
}

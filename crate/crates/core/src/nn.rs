//! Minimal dense layers with hand-written gradients, generic over float width.

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub trait Real: Float + AddAssign + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Affine map `y = W x + b` with row-major `W` of shape `[out][inp]`.
/// An empty `bias` means the layer has no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize, with_bias: bool) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); if with_bias { out_dim } else { 0 }],
        }
    }

    /// Uniform weights in `+-scale / sqrt(fan_in)`, zero bias.
    pub fn random(out_dim: usize, in_dim: usize, with_bias: bool, scale: f64, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = scale / (fan_in.max(1) as f64).sqrt();
        let mut l = Self::zeros(out_dim, in_dim, with_bias);
        for w in &mut l.weight {
            *w = T::of(rng.gen_range(-bound..bound));
        }
        l
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// `out = W x + b`.
    pub fn forward(&self, x: &[T], out: &mut [T]) {
        for (o, y) in out.iter_mut().enumerate().take(self.out_dim) {
            let mut acc = if self.has_bias() { self.bias[o] } else { T::zero() };
            for (w, xi) in self.row(o).iter().zip(x) {
                acc += *w * *xi;
            }
            *y = acc;
        }
    }

    /// Accumulate parameter gradients for upstream gradient `dy` at input `x`,
    /// and add `W^T dy` into `dx` when given.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>, dx: Option<&mut [T]>) {
        for o in 0..self.out_dim {
            let g = dy[o];
            if g == T::zero() {
                continue;
            }
            let row = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * *xi;
            }
            if grad.has_bias() {
                grad.bias[o] += g;
            }
        }
        if let Some(dx) = dx {
            for o in 0..self.out_dim {
                let g = dy[o];
                if g == T::zero() {
                    continue;
                }
                for (d, w) in dx.iter_mut().zip(self.row(o)) {
                    *d += g * *w;
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_dim, self.in_dim, self.has_bias())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            weight: self.weight.iter().map(|w| U::of(w.f64())).collect(),
            bias: self.bias.iter().map(|w| U::of(w.f64())).collect(),
        }
    }
}

/// A named collection of linear layers: the unit of optimization and storage.
pub trait ParamSet<T: Real> {
    fn layers(&self) -> Vec<(&'static str, &Linear<T>)>;
    fn layers_mut(&mut self) -> Vec<(&'static str, &mut Linear<T>)>;

    fn num_params(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters flattened in layer order (weights then bias).
    fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        for (_, l) in self.layers() {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    fn set_flat(&mut self, v: &[T]) {
        let mut k = 0;
        for (_, l) in self.layers_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&v[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&v[k..k + nb]);
            k += nb;
        }
    }
}

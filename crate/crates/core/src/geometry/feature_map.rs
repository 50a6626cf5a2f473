use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2D feature map, channel-major `[channels][height][width]`.
///
/// Feature cell `(i, j)` summarizes the `stride x stride` pixel patch whose
/// center is at pixel coordinates `((j + 0.5) * stride, (i + 0.5) * stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if stride == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::Input("feature map dimensions and stride must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map [{channels}, {height}, {width}] needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            stride,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    /// Sample every channel at pixel coordinates `(u, v)` into `out`.
    ///
    /// Coordinates outside the map are clamped to the border cells.
    pub fn sample_into(&self, u: f64, v: f64, interp: Interpolation, out: &mut [f32]) {
        let s = self.stride as f64;
        let fx = (u / s - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (v / s - 0.5).clamp(0.0, (self.height - 1) as f64);
        let plane = self.height * self.width;
        match interp {
            Interpolation::Nearest => {
                let j = fx.round() as usize;
                let i = fy.round() as usize;
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    *o = self.data[c * plane + i * self.width + j];
                }
            }
            Interpolation::Bilinear => {
                let j0 = fx.floor() as usize;
                let i0 = fy.floor() as usize;
                let j1 = (j0 + 1).min(self.width - 1);
                let i1 = (i0 + 1).min(self.height - 1);
                let ax = fx - j0 as f64;
                let ay = fy - i0 as f64;
                let w00 = (1.0 - ax) * (1.0 - ay);
                let w01 = ax * (1.0 - ay);
                let w10 = (1.0 - ax) * ay;
                let w11 = ax * ay;
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    let base = c * plane;
                    let v = w00 * self.data[base + i0 * self.width + j0] as f64
                        + w01 * self.data[base + i0 * self.width + j1] as f64
                        + w10 * self.data[base + i1 * self.width + j0] as f64
                        + w11 * self.data[base + i1 * self.width + j1] as f64;
                    *o = v as f32;
                }
            }
        }
    }
}

pub fn sample_bilinear(fm: &FeatureMap, u: f64, v: f64) -> Vec<f32> {
    let mut out = vec![0.0; fm.channels];
    fm.sample_into(u, v, Interpolation::Bilinear, &mut out);
    out
}

pub fn sample_nearest(fm: &FeatureMap, u: f64, v: f64) -> Vec<f32> {
    let mut out = vec![0.0; fm.channels];
    fm.sample_into(u, v, Interpolation::Nearest, &mut out);
    out
}

/// RGB image, channel-major `[3][height][width]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "rgb image {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = vec![0.0; 3 * width * height];
        for (c, &val) in rgb.iter().enumerate() {
            data[c * width * height..(c + 1) * width * height].fill(val);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FeatureMap {
        // 2 channels, 3x4 cells, stride 4; channel 0 = column, channel 1 = 10*row
        let (h, w) = (3, 4);
        let mut data = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let _ = i;
                data.push(j as f32);
            }
        }
        for i in 0..h {
            for _ in 0..w {
                data.push(10.0 * i as f32);
            }
        }
        FeatureMap::new(2, h, w, 4, data).unwrap()
    }

    // scalar reference: explicit four-neighbour lerp on the clamped cell coords
    fn reference(fm: &FeatureMap, c: usize, u: f64, v: f64) -> f64 {
        let x = (u / fm.stride as f64 - 0.5).max(0.0).min((fm.width - 1) as f64);
        let y = (v / fm.stride as f64 - 0.5).max(0.0).min((fm.height - 1) as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let (x1, y1) = ((x0 + 1.0).min((fm.width - 1) as f64), (y0 + 1.0).min((fm.height - 1) as f64));
        let g = |xx: f64, yy: f64| fm.at(c, yy as usize, xx as usize) as f64;
        let top = g(x0, y0) + (x - x0) * (g(x1, y0) - g(x0, y0));
        let bot = g(x0, y1) + (x - x0) * (g(x1, y1) - g(x0, y1));
        top + (y - y0) * (bot - top)
    }

    #[test]
    fn grid_point_returns_stored_value() {
        let fm = ramp();
        // cell (1, 2) center is at pixel (2.5*4, 1.5*4)
        assert_eq!(sample_bilinear(&fm, 10.0, 6.0), vec![2.0, 10.0]);
    }

    #[test]
    fn midpoint_is_average() {
        let fm = ramp();
        // halfway between cells (0,1) and (0,2)
        let f = sample_bilinear(&fm, 8.0, 2.0);
        assert_eq!(f[0], 1.5);
    }

    #[test]
    fn clamped_sampling_matches_reference() {
        let fm = ramp();
        for &(u, v) in &[(-5.0, -3.0), (100.0, 2.0), (3.3, 50.0), (7.1, 9.9), (0.0, 0.0), (15.9, 11.9)] {
            let f = sample_bilinear(&fm, u, v);
            for c in 0..2 {
                assert!((f[c] as f64 - reference(&fm, c, u, v)).abs() < 1e-5, "({u},{v}) c{c}");
            }
        }
    }

    #[test]
    fn nearest_picks_closest_cell() {
        let fm = ramp();
        assert_eq!(sample_nearest(&fm, 9.0, 5.0), vec![2.0, 10.0]);
    }
}

//! Cameras, rigid transforms, projection, and voxel grid containers.
//!
//! Camera convention: right-handed camera frame looking down +z, with image
//! `u` to the right and `v` down. Poses are camera-to-world.

mod camera;
mod feature_map;
mod grid;

pub use camera::{
    frustum_intersects_aabb, project, world_from_chunk, CameraIntrinsics, CameraView, Projection, RigidTransform,
};
pub use feature_map::{sample_bilinear, sample_nearest, FeatureMap, ImageRgb, Interpolation};
pub use grid::{DenseGrid, GridSpec, SparseGrid};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    #[default]
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two axes orthogonal to `self`, in increasing order.
    pub fn others(self) -> [usize; 2] {
        match self {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::Parameter(format!("unknown axis `{s}`"))),
        }
    }
}

/// Axis-aligned box in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(min[i] <= max[i]) || !min[i].is_finite() || !max[i].is_finite()) {
            return Err(Error::Input(format!("invalid aabb {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn cube(origin: [f64; 3], edge: f64) -> Self {
        Self {
            min: origin,
            max: [origin[0] + edge, origin[1] + edge, origin[2] + edge],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { self.min[0] } else { self.max[0] },
                if i & 2 == 0 { self.min[1] } else { self.max[1] },
                if i & 4 == 0 { self.min[2] } else { self.max[2] },
            )
        })
    }

    /// Grow around the center so every extent is multiplied by `1 + fraction`.
    pub fn inflate(&self, fraction: f64) -> Self {
        let e = self.extent();
        let mut out = *self;
        for i in 0..3 {
            let d = 0.5 * fraction * e[i];
            out.min[i] -= d;
            out.max[i] += d;
        }
        out
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = std::array::from_fn(|i| self.min[i].max(other.min[i]));
        let max = std::array::from_fn(|i| self.max[i].min(other.max[i]));
        (0..3).all(|i| min[i] <= max[i]).then_some(Aabb { min, max })
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = pts.into_iter();
        let first = it.next()?;
        let mut b = Aabb {
            min: [first.x, first.y, first.z],
            max: [first.x, first.y, first.z],
        };
        for p in it {
            for i in 0..3 {
                b.min[i] = b.min[i].min(p[i]);
                b.max[i] = b.max[i].max(p[i]);
            }
        }
        Some(b)
    }
}

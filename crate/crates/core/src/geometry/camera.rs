use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{Aabb, FeatureMap, ImageRgb, Vec3};
use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "invalid intrinsics fx={fx} fy={fy} size={width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Symmetric intrinsics from a horizontal field of view in radians.
    pub fn from_fov(fov_x: f64, width: u32, height: u32) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    /// Camera-frame ray direction (not normalized, z = 1) through pixel coords.
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rotation plus translation: `x_out = R x_in + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Input(format!(
                "rotation not orthonormal (err {ortho:.3e}, det {det:.6})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), t)
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`, with the
    /// image `v` axis pointing away from `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Input("look_at target equals eye".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Input("look_at direction parallel to up".into()))?;
        let y = z.cross(&x);
        Ok(Self::from_parts_unchecked(Matrix3::from_columns(&[x, y, z]), eye))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse transform without forming it.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::from_parts_unchecked(rt, -(rt * self.translation))
    }

    pub fn compose(&self, rhs: &RigidTransform) -> Self {
        Self::from_parts_unchecked(self.rotation * rhs.rotation, self.rotation * rhs.translation + self.translation)
    }
}

/// One posed input image with optional image data and feature map.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world.
    pub pose: RigidTransform,
    pub feature_map: Option<Arc<FeatureMap>>,
    pub image: Option<Arc<ImageRgb>>,
}

impl CameraView {
    pub fn new(intrinsics: CameraIntrinsics, pose: RigidTransform) -> Self {
        Self {
            intrinsics,
            pose,
            feature_map: None,
            image: None,
        }
    }

    pub fn with_feature_map(mut self, fm: Arc<FeatureMap>) -> Self {
        self.feature_map = Some(fm);
        self
    }

    pub fn with_image(mut self, img: Arc<ImageRgb>) -> Self {
        self.image = Some(img);
        self
    }

    pub fn center(&self) -> Vec3 {
        *self.pose.translation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

/// Perspective projection of a world point into `view`.
///
/// `valid` is set iff the camera-frame depth is positive and the pixel lies
/// in `[0, width) x [0, height)`. No visibility test is performed.
pub fn project(view: &CameraView, x_world: &Vec3) -> Projection {
    let pc = view.pose.apply_inverse(x_world);
    let k = &view.intrinsics;
    let depth = pc.z;
    if depth <= 0.0 {
        return Projection {
            u: f64::NAN,
            v: f64::NAN,
            depth,
            valid: false,
        };
    }
    let u = k.fx * pc.x / depth + k.cx;
    let v = k.fy * pc.y / depth + k.cy;
    let valid = u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64;
    Projection { u, v, depth, valid }
}

/// Chunk-frame point to world frame; chunk frames are pure translations.
pub fn world_from_chunk(t_c: &Vec3, x_chunk: &Vec3) -> Vec3 {
    x_chunk + t_c
}

/// Conservative frustum/box overlap test: false only when one frustum plane
/// (near, far, or an image border) has every box corner strictly outside.
pub fn frustum_intersects_aabb(view: &CameraView, aabb: &Aabb, near: f64, far: f64) -> bool {
    let k = &view.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let corners = aabb.corners().map(|c| view.pose.apply_inverse(&c));
    let planes: [&dyn Fn(&Vec3) -> f64; 6] = [
        &|p| p.z - near,
        &|p| far - p.z,
        &|p| k.fx * p.x + k.cx * p.z,
        &|p| (w - k.cx) * p.z - k.fx * p.x,
        &|p| k.fy * p.y + k.cy * p.z,
        &|p| (h - k.cy) * p.z - k.fy * p.y,
    ];
    !planes.iter().any(|plane| corners.iter().all(|c| plane(c) < 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn k640() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray() {
        let v = CameraView::new(k640(), RigidTransform::identity());
        let p = project(&v, &Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((p.u, p.v, p.depth, p.valid), (320.0, 240.0, 1.0, true));
    }

    #[test]
    fn behind_camera_invalid() {
        let v = CameraView::new(k640(), RigidTransform::identity());
        assert!(!project(&v, &Vec3::new(0.0, 0.0, -1.0)).valid);
    }

    #[test]
    fn flipped_camera_above_origin() {
        // camera at (0,0,2) whose +z axis points along world -z
        let r = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        let v = CameraView::new(k640(), RigidTransform::new(r, Vec3::new(0.0, 0.0, 2.0)).unwrap());
        let p = project(&v, &Vec3::new(0.5, 0.0, 0.0));
        // camera frame point (0.5, 0, 2): u = 320 + 500 * 0.25
        assert!((p.u - 445.0).abs() < 1e-12);
        assert!((p.depth - 2.0).abs() < 1e-12);
        assert!(p.valid);
    }

    #[test]
    fn chunk_offsets() {
        assert_eq!(world_from_chunk(&Vec3::zeros(), &Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(world_from_chunk(&Vec3::new(-2.0, 0.0, 5.0), &Vec3::zeros()), Vec3::new(-2.0, 0.0, 5.0));
        let v = CameraView::new(k640(), RigidTransform::from_translation(Vec3::new(0.1, -0.2, -3.0)));
        let t = Vec3::new(0.3, 0.1, 0.2);
        let x = Vec3::new(0.2, 0.4, 0.5);
        assert_eq!(project(&v, &world_from_chunk(&t, &x)), project(&v, &(x + t)));
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_z_at_target() {
        let p = RigidTransform::look_at(Vec3::new(1.0, 1.5, 0.0), Vec3::new(1.0, 0.5, 4.0), Vec3::y()).unwrap();
        RigidTransform::new(*p.rotation(), *p.translation()).unwrap();
        let v = CameraView::new(k640(), p);
        let pr = project(&v, &Vec3::new(1.0, 0.5, 4.0));
        assert!((pr.u - 320.0).abs() < 1e-9 && (pr.v - 240.0).abs() < 1e-9);
        // world up appears toward smaller v
        let above = project(&v, &Vec3::new(1.0, 0.9, 4.0));
        assert!(above.v < 240.0);
    }

    #[test]
    fn frustum_basic_cases() {
        let v = CameraView::new(k640(), RigidTransform::identity());
        let front = Aabb::new([-0.5, -0.5, 1.5], [0.5, 0.5, 2.5]).unwrap();
        assert!(frustum_intersects_aabb(&v, &front, 0.05, 10.0));
        let behind = Aabb::new([-0.5, -0.5, -3.0], [0.5, 0.5, -1.0]).unwrap();
        assert!(!frustum_intersects_aabb(&v, &behind, 0.05, 10.0));
        let too_far = Aabb::new([-0.5, -0.5, 20.0], [0.5, 0.5, 21.0]).unwrap();
        assert!(!frustum_intersects_aabb(&v, &too_far, 0.05, 10.0));
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let angle = rng.gen_range(-3.0..3.0);
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis + Vec3::new(1e-3, 0.0, 0.0)), angle)
            .into_inner()
    }

    #[test]
    fn grazing_box_agrees_with_monte_carlo() {
        // box straddling the right image border at depth ~2
        let v = CameraView::new(k640(), RigidTransform::identity());
        let edge_x = (640.0 - 320.0) / 500.0 * 2.0;
        let b = Aabb::new([edge_x - 0.01, -0.2, 1.9], [edge_x + 0.5, 0.2, 2.1]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut any = false;
        for _ in 0..1_000_000 {
            let p = Vec3::new(
                rng.gen_range(b.min[0]..=b.max[0]),
                rng.gen_range(b.min[1]..=b.max[1]),
                rng.gen_range(b.min[2]..=b.max[2]),
            );
            let pr = project(&v, &p);
            if pr.valid && pr.depth >= 0.05 && pr.depth <= 10.0 {
                any = true;
                break;
            }
        }
        assert!(any);
        assert!(frustum_intersects_aabb(&v, &b, 0.05, 10.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frame_equivariance(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pose = RigidTransform::new(random_rotation(&mut rng), Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).unwrap();
            let t = RigidTransform::new(random_rotation(&mut rng), Vec3::new(rng.gen_range(-5.0..5.0), 0.3, -1.0)).unwrap();
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let a = project(&CameraView::new(k640(), pose), &x);
            let b = project(&CameraView::new(k640(), t.compose(&pose)), &t.apply(&x));
            prop_assert_eq!(a.valid, b.valid);
            prop_assert!((a.depth - b.depth).abs() < 1e-9);
            if a.depth > 0.0 {
                prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6);
            }
        }

        #[test]
        fn frustum_is_conservative(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pose = RigidTransform::new(random_rotation(&mut rng), Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
            let v = CameraView::new(CameraIntrinsics::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap(), pose);
            let c = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let e = rng.gen_range(0.05..1.5);
            let b = Aabb::cube(c, e);
            let (near, far) = (0.05, rng.gen_range(1.0..8.0));
            let hit = frustum_intersects_aabb(&v, &b, near, far);
            for _ in 0..2000 {
                let p = Vec3::new(c[0] + rng.gen::<f64>() * e, c[1] + rng.gen::<f64>() * e, c[2] + rng.gen::<f64>() * e);
                let pr = project(&v, &p);
                if pr.valid && pr.depth >= near && pr.depth <= far {
                    prop_assert!(hit);
                    break;
                }
            }
        }
    }
}

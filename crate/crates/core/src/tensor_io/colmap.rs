//! COLMAP text model (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! COLMAP stores each image as a camera-from-world rotation (quaternion,
//! w x y z) and translation. [`ColmapImage::camera_to_world`] inverts that
//! into the pose convention used everywhere else in the crate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};

const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl ColmapCamera {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// Camera-from-world rotation, (w, x, y, z).
    pub qvec: [f64; 4],
    /// Camera-from-world translation.
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

impl ColmapImage {
    pub fn camera_from_world(&self) -> RigidTransform {
        let [w, x, y, z] = self.qvec;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        RigidTransform::from_parts_unchecked(
            q.to_rotation_matrix().into_inner(),
            Vector3::from(self.tvec),
        )
    }

    /// Camera-to-world pose (the inverse of what COLMAP stores).
    pub fn camera_to_world(&self) -> RigidTransform {
        self.camera_from_world().inverse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    /// (image id, point2D index) pairs.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColmapModel {
    pub cameras: Vec<ColmapCamera>,
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl ColmapModel {
    pub fn camera(&self, id: u32) -> Option<&ColmapCamera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            if self.camera(img.camera_id).is_none() {
                return Err(Error::Reference(format!(
                    "image {} references missing camera {}",
                    img.id, img.camera_id
                )));
            }
            let n = img.qvec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > QUAT_NORM_TOL {
                return Err(Error::Format(format!(
                    "image {} quaternion norm {n} is not unit",
                    img.id
                )));
            }
        }
        Ok(())
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(tok: Option<&str>, what: &str, file: &str, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Format(format!("{file}:{line}: missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::Format(format!("{file}:{line}: cannot parse {what} from `{tok}`")))
}

fn parse_cameras(text: &str) -> Result<Vec<ColmapCamera>> {
    let mut out = Vec::new();
    for (ln, line) in data_lines(text) {
        let mut it = line.split_whitespace();
        let id = field(it.next(), "camera id", "cameras.txt", ln)?;
        let model: String = field(it.next(), "model", "cameras.txt", ln)?;
        let width = field(it.next(), "width", "cameras.txt", ln)?;
        let height = field(it.next(), "height", "cameras.txt", ln)?;
        let params: Vec<f64> = it
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("cameras.txt:{ln}: bad parameter `{t}`")))
            })
            .collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match (model.as_str(), params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE", _) | ("SIMPLE_PINHOLE", _) => {
                return Err(Error::Format(format!(
                    "cameras.txt:{ln}: wrong parameter count {} for {model}",
                    params.len()
                )))
            }
            _ => return Err(Error::UnsupportedModel(model)),
        };
        out.push(ColmapCamera {
            id,
            model,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        });
    }
    Ok(out)
}

fn parse_images(text: &str) -> Result<Vec<ColmapImage>> {
    // Each image occupies two lines; the second (2D observations) may be empty,
    // so blank lines cannot simply be skipped.
    let mut out = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .peekable();
    while let Some((i, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ln = i + 1;
        let mut it = line.split_whitespace();
        let id = field(it.next(), "image id", "images.txt", ln)?;
        let mut qvec = [0.0; 4];
        for (k, q) in qvec.iter_mut().enumerate() {
            *q = field(it.next(), &format!("q{k}"), "images.txt", ln)?;
        }
        let mut tvec = [0.0; 3];
        for (k, t) in tvec.iter_mut().enumerate() {
            *t = field(it.next(), &format!("t{k}"), "images.txt", ln)?;
        }
        let camera_id = field(it.next(), "camera id", "images.txt", ln)?;
        let name: String = field(it.next(), "name", "images.txt", ln)?;
        // observations line
        lines.next();
        out.push(ColmapImage {
            id,
            qvec,
            tvec,
            camera_id,
            name,
        });
    }
    Ok(out)
}

fn parse_points(text: &str) -> Result<Vec<ColmapPoint>> {
    let mut out = Vec::new();
    for (ln, line) in data_lines(text) {
        let mut it = line.split_whitespace();
        let id = field(it.next(), "point id", "points3D.txt", ln)?;
        let mut xyz = [0.0; 3];
        for v in xyz.iter_mut() {
            *v = field(it.next(), "coordinate", "points3D.txt", ln)?;
        }
        let mut rgb = [0u8; 3];
        for v in rgb.iter_mut() {
            *v = field(it.next(), "color", "points3D.txt", ln)?;
        }
        let error = field(it.next(), "error", "points3D.txt", ln)?;
        let rest: Vec<&str> = it.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(Error::Format(format!("points3D.txt:{ln}: odd track length")));
        }
        let track = rest
            .chunks_exact(2)
            .map(|p| {
                Ok((
                    field(Some(p[0]), "track image", "points3D.txt", ln)?,
                    field(Some(p[1]), "track point", "points3D.txt", ln)?,
                ))
            })
            .collect::<Result<_>>()?;
        if xyz.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::Format(format!("points3D.txt:{ln}: non-finite point")));
        }
        out.push(ColmapPoint {
            id,
            xyz,
            rgb,
            error,
            track,
        });
    }
    Ok(out)
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| Error::io(p, e))
}

/// Parse a COLMAP text export directory.
pub fn parse_colmap(dir: impl AsRef<Path>) -> Result<ColmapModel> {
    let dir = dir.as_ref();
    let model = ColmapModel {
        cameras: parse_cameras(&read_text(dir, "cameras.txt")?)?,
        images: parse_images(&read_text(dir, "images.txt")?)?,
        points: parse_points(&read_text(dir, "points3D.txt")?)?,
    };
    model.validate()?;
    Ok(model)
}

/// Build the COLMAP image record for a camera-to-world pose.
pub fn image_from_pose(id: u32, camera_id: u32, name: &str, camera_to_world: &RigidTransform) -> ColmapImage {
    let cfw = camera_to_world.inverse();
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*cfw.rotation());
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let mut qvec = [q.w, q.i, q.j, q.k];
    if qvec[0] < 0.0 {
        qvec.iter_mut().for_each(|v| *v = -*v);
    }
    ColmapImage {
        id,
        qvec,
        tvec: [cfw.translation().x, cfw.translation().y, cfw.translation().z],
        camera_id,
        name: name.to_string(),
    }
}

/// Write a model in COLMAP text layout (PINHOLE / SIMPLE_PINHOLE only).
pub fn write_colmap(dir: impl AsRef<Path>, model: &ColmapModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let ordered: BTreeMap<u32, &ColmapCamera> = model.cameras.iter().map(|c| (c.id, c)).collect();
    for c in ordered.values() {
        match c.model.as_str() {
            "PINHOLE" => writeln!(cams, "{} PINHOLE {} {} {} {} {} {}", c.id, c.width, c.height, c.fx, c.fy, c.cx, c.cy),
            "SIMPLE_PINHOLE" => writeln!(cams, "{} SIMPLE_PINHOLE {} {} {} {} {}", c.id, c.width, c.height, c.fx, c.cx, c.cy),
            other => return Err(Error::UnsupportedModel(other.to_string())),
        }
        .expect("write to String");
    }

    let mut imgs = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for im in &model.images {
        let [w, x, y, z] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        writeln!(imgs, "{} {w} {x} {y} {z} {tx} {ty} {tz} {} {}\n", im.id, im.camera_id, im.name)
            .expect("write to String");
    }

    let mut pts = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in &model.points {
        let [x, y, z] = p.xyz;
        let [r, g, b] = p.rgb;
        write!(pts, "{} {x} {y} {z} {r} {g} {b} {}", p.id, p.error).expect("write to String");
        for (i, j) in &p.track {
            write!(pts, " {i} {j}").expect("write to String");
        }
        pts.push('\n');
    }

    for (name, body) in [("cameras.txt", cams), ("images.txt", imgs), ("points3D.txt", pts)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Convenience: rotation matrix from a (w, x, y, z) quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_model(dir: &Path, cameras: &str, images: &str, points: &str) {
        fs::write(dir.join("cameras.txt"), cameras).unwrap();
        fs::write(dir.join("images.txt"), images).unwrap();
        fs::write(dir.join("points3D.txt"), points).unwrap();
    }

    #[test]
    fn pinhole_fields_and_identity_pose() {
        let d = tempfile::tempdir().unwrap();
        write_model(
            d.path(),
            "# comment\n1 PINHOLE 640 480 500 500 320 240\n",
            "# c\n1 1 0 0 0 0 0 0 1 a.png\n\n",
            "1 0.5 0.25 1 10 20 30 0.1 1 0\n",
        );
        let m = parse_colmap(d.path()).unwrap();
        let c = &m.cameras[0];
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (500.0, 500.0, 320.0, 240.0));
        assert_eq!((c.width, c.height), (640, 480));
        let pose = m.images[0].camera_to_world();
        assert!((pose.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(pose.translation().norm() < 1e-12);
        assert_eq!(m.points[0].track, vec![(1, 0)]);
    }

    #[test]
    fn camera_center_is_inverted_translation() {
        let d = tempfile::tempdir().unwrap();
        write_model(
            d.path(),
            "1 SIMPLE_PINHOLE 64 48 50 32 24\n",
            "1 1 0 0 0 0 0 -2 1 a.png\n12 13 -1\n",
            "",
        );
        let m = parse_colmap(d.path()).unwrap();
        assert_eq!(m.cameras[0].fy, 50.0);
        let c = m.images[0].camera_to_world();
        // hand inversion of [I | (0,0,-2)]: center = -R^T t = (0,0,2)
        assert!((c.translation() - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn unsupported_model_rejected() {
        let d = tempfile::tempdir().unwrap();
        write_model(d.path(), "1 OPENCV 64 48 50 50 32 24 0 0 0 0\n", "", "");
        assert!(matches!(parse_colmap(d.path()), Err(Error::UnsupportedModel(m)) if m == "OPENCV"));
    }

    #[test]
    fn dangling_camera_rejected() {
        let d = tempfile::tempdir().unwrap();
        write_model(
            d.path(),
            "1 PINHOLE 64 48 50 50 32 24\n",
            "1 1 0 0 0 0 0 0 7 a.png\n\n",
            "",
        );
        assert!(matches!(parse_colmap(d.path()), Err(Error::Reference(_))));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let d = tempfile::tempdir().unwrap();
        let pose = RigidTransform::new(
            quat_to_matrix([0.9, 0.1, -0.3, 0.2].map(|v| v / (0.81f64 + 0.01 + 0.09 + 0.04).sqrt())),
            Vector3::new(0.3, -1.0, 2.5),
        )
        .unwrap();
        let model = ColmapModel {
            cameras: vec![ColmapCamera {
                id: 3,
                model: "PINHOLE".into(),
                width: 96,
                height: 72,
                fx: 80.5,
                fy: 80.5,
                cx: 48.0,
                cy: 36.0,
            }],
            images: vec![image_from_pose(1, 3, "view_000", &pose)],
            points: vec![ColmapPoint {
                id: 1,
                xyz: [1.0, 2.0, 3.0],
                rgb: [1, 2, 3],
                error: 0.0,
                track: vec![],
            }],
        };
        write_colmap(d.path(), &model).unwrap();
        let back = parse_colmap(d.path()).unwrap();
        assert_eq!(back.cameras, model.cameras);
        let p = back.images[0].camera_to_world();
        assert!((p.rotation() - pose.rotation()).norm() < 1e-9);
        assert!((p.translation() - pose.translation()).norm() < 1e-9);
        assert_eq!(back.points, model.points);
    }
}

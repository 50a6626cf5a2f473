use std::fmt::Write as _;
use std::path::Path;

use super::RenderedView;
use crate::error::{Error, Result};
use crate::tensor_io::{write_tensor, TensorFile};

/// Viridis control points, sampled evenly on [0, 1].
#[allow(clippy::approx_constant)]
const VIRIDIS: [[f32; 3]; 9] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.478, 0.821, 0.318],
    [0.993, 0.906, 0.144],
];

pub fn colormap(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = (x - i as f64) as f32;
    std::array::from_fn(|c| ((VIRIDIS[i][c] * (1.0 - f) + VIRIDIS[i + 1][c] * f) * 255.0).round() as u8)
}

fn save_png(path: &Path, w: usize, h: usize, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(w as u32, h as u32, rgb).ok_or_else(|| Error::Shape("image buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Depth mapped through the colormap over the view's valid range; invalid pixels black.
pub fn depth_png(view: &RenderedView, path: &Path) -> Result<()> {
    let valid = || view.depth.iter().zip(&view.valid).filter(|p| *p.1).map(|p| *p.0);
    let lo = valid().fold(f64::INFINITY, f64::min);
    let hi = valid().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let rgb = (0..view.depth.len())
        .flat_map(|i| if view.valid[i] { colormap((view.depth[i] - lo) / span) } else { [0; 3] })
        .collect();
    save_png(path, view.width, view.height, rgb)
}

/// Normals as (n + 1) / 2; invalid pixels black.
pub fn normal_png(view: &RenderedView, path: &Path) -> Result<()> {
    let rgb = (0..view.normal.len())
        .flat_map(|i| {
            if view.valid[i] {
                view.normal[i].map(|c| ((c + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            } else {
                [0; 3]
            }
        })
        .collect();
    save_png(path, view.width, view.height, rgb)
}

fn color_bytes(colors: &[[f32; 3]], mask: impl Fn(usize) -> bool) -> Vec<u8> {
    (0..colors.len())
        .flat_map(|i| if mask(i) { colors[i].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8) } else { [0; 3] })
        .collect()
}

/// Depth, normal and mask tensors plus PNG previews: `{stem}_depth.cgf`,
/// `{stem}_normal.cgf`, `{stem}_mask.cgf`, `{stem}_depth.png`, `{stem}_normal.png`.
pub fn save_rendered(view: &RenderedView, dir: &Path, stem: &str) -> Result<()> {
    let (w, h) = (view.width, view.height);
    let depth: Vec<f32> = (0..w * h).map(|i| if view.valid[i] { view.depth[i] as f32 } else { 0.0 }).collect();
    let mut normal = vec![0.0f32; 3 * w * h];
    for i in 0..w * h {
        for c in 0..3 {
            normal[c * w * h + i] = view.normal[i][c] as f32;
        }
    }
    let mask = view.valid.iter().map(|&v| v as u8 as f32).collect();
    write_tensor(dir.join(format!("{stem}_depth.cgf")), &TensorFile::new(vec![h, w], depth)?)?;
    write_tensor(dir.join(format!("{stem}_normal.cgf")), &TensorFile::new(vec![3, h, w], normal)?)?;
    write_tensor(dir.join(format!("{stem}_mask.cgf")), &TensorFile::new(vec![h, w], mask)?)?;
    depth_png(view, &dir.join(format!("{stem}_depth.png")))?;
    normal_png(view, &dir.join(format!("{stem}_normal.png")))
}

/// Masked colour pair for external perceptual metrics: both images keep only
/// pixels valid in both renders. Writes `{stem}_pred.png` and `{stem}_gt.png`.
pub fn export_masked_pair(pred: &RenderedView, gt: &RenderedView, dir: &Path, stem: &str) -> Result<()> {
    let (Some(pc), Some(gc)) = (&pred.color, &gt.color) else {
        return Err(Error::Input("both renders need colour for a masked pair".into()));
    };
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Shape("masked pair resolutions differ".into()));
    }
    let both = |i: usize| pred.valid[i] && gt.valid[i];
    save_png(&dir.join(format!("{stem}_pred.png")), pred.width, pred.height, color_bytes(pc, both))?;
    save_png(&dir.join(format!("{stem}_gt.png")), gt.width, gt.height, color_bytes(gc, both))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    /// Pixels or samples the value was computed from.
    pub count: usize,
}

/// Named metric values for one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub scene: String,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn new(scene: impl Into<String>) -> Self {
        Self { scene: scene.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, name: &str, value: f64, count: usize) {
        self.rows.push(MetricRow { name: name.to_string(), value, count });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scene: {}\n", self.scene);
        for r in &self.rows {
            let _ = writeln!(s, "{:<20} {:>14.6} (n={})", r.name, r.value, r.count);
        }
        s
    }

    pub fn csv_header(&self) -> String {
        std::iter::once("scene".to_string()).chain(self.rows.iter().map(|r| r.name.clone())).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        std::iter::once(self.scene.clone()).chain(self.rows.iter().map(|r| format!("{}", r.value))).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::read_tensor;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(-3.0), colormap(0.0));
    }

    #[test]
    fn rendered_view_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = RenderedView::empty(3, 2);
        v.valid[4] = true;
        v.depth[4] = 2.5;
        v.normal[4] = [0.0, 0.0, -1.0];
        v.color = Some(vec![[1.0, 0.5, 0.0]; 6]);
        save_rendered(&v, dir.path(), "v0").unwrap();
        let d = read_tensor(dir.path().join("v0_depth.cgf")).unwrap();
        assert_eq!(d.dims(), &[2, 3]);
        assert_eq!(d.data()[4], 2.5);
        let n = read_tensor(dir.path().join("v0_normal.cgf")).unwrap();
        assert_eq!(n.data()[2 * 6 + 4], -1.0);
        let png = image::open(dir.path().join("v0_depth.png")).unwrap().to_rgb8();
        assert_eq!(png.get_pixel(0, 0).0, [0, 0, 0]);
        export_masked_pair(&v, &v, dir.path(), "pair").unwrap();
        let p = image::open(dir.path().join("pair_pred.png")).unwrap().to_rgb8();
        assert_eq!(p.get_pixel(1, 1).0, [255, 128, 0]);
        assert_eq!(p.get_pixel(0, 0).0, [0, 0, 0]);
    }

    #[test]
    fn report_formats() {
        let mut r = MetricsReport::new("seed7");
        r.push("chamfer", 0.25, 100);
        r.push("f_score", 1.0, 100);
        assert_eq!(r.csv_header(), "scene,chamfer,f_score");
        assert_eq!(r.csv_row(), "seed7,0.25,1");
        assert!(r.to_text().contains("chamfer"));
        assert_eq!(r.get("f_score"), Some(1.0));
    }
}

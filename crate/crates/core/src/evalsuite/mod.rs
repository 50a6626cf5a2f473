//! Rendering-based and sampled-surface evaluation metrics.

mod export;
mod pixel;
mod raycast;
mod surface;

pub use export::{colormap, depth_png, export_masked_pair, normal_png, save_rendered, MetricRow, MetricsReport};
pub use pixel::{completeness, depth_metrics, normal_error, DepthMetrics};
pub use raycast::{intersect_triangle, raycast_render, vertex_color_shader, Hit, Raycaster, RenderedView, Shader};
pub use surface::{
    apply_envelope, chamfer, f_score, nearest_neighbors, normal_consistency, occupancy_iou, sample_surface,
    EnvelopeTester, FScore, ObservationEnvelope, SampledSurface, DEFAULT_NORMAL_CAP, DEFAULT_SAMPLES, DEFAULT_TAU,
};

use crate::error::Result;
use crate::geometry::CameraView;
use crate::tensor_io::MeshData;

/// Render `mesh` from every view at the views' native resolution.
pub fn render_views(mesh: &MeshData, views: &[CameraView]) -> Vec<RenderedView> {
    let caster = Raycaster::new(mesh);
    views
        .iter()
        .map(|v| raycast_render(&caster, v, (v.intrinsics.width as usize, v.intrinsics.height as usize), None))
        .collect()
}

/// Full metric set for one scene: pixel metrics over `views` and sampled-surface
/// metrics after clipping the prediction to `envelope`.
pub fn evaluate_scene(
    scene: &str,
    pred: &MeshData,
    gt: &MeshData,
    views: &[CameraView],
    envelope: Option<&ObservationEnvelope>,
    samples: usize,
    seed: u64,
    tau: f64,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::new(scene);
    if !views.is_empty() {
        let pr = render_views(pred, views);
        let gr = render_views(gt, views);
        let gt_pixels: usize = gr.iter().map(|g| g.valid_count()).sum();
        match depth_metrics(&pr, &gr) {
            Ok(d) => {
                report.push("mae", d.mae, d.pixels);
                report.push("rmse", d.rmse, d.pixels);
                report.push("abs_rel", d.abs_rel, d.pixels);
                report.push("sq_rel", d.sq_rel, d.pixels);
                report.push("normal_deg", normal_error(&pr, &gr)?, d.pixels);
            }
            Err(e) => log::warn!("{scene}: pixel metrics skipped: {e}"),
        }
        match completeness(&pr, &gr) {
            Ok(c) => report.push("completeness", c, gt_pixels),
            Err(e) => log::warn!("{scene}: completeness skipped: {e}"),
        }
    }
    let clipped = match envelope {
        Some(env) => apply_envelope(pred, env)?,
        None => pred.clone(),
    };
    let ps = sample_surface(&clipped, samples, seed)?;
    let gs = sample_surface(gt, samples, seed)?;
    report.push("chamfer", chamfer(&ps, &gs)?, samples);
    let f = f_score(&ps, &gs, tau)?;
    report.push("precision", f.precision, samples);
    report.push("recall", f.recall, samples);
    report.push("f_score", f.f, samples);
    report.push("normal_consistency", normal_consistency(&ps, &gs, DEFAULT_NORMAL_CAP)?, samples);
    Ok(report)
}

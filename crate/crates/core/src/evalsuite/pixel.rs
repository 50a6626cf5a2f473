use super::RenderedView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub pixels: usize,
}

fn check_pairs(pred: &[RenderedView], gt: &[RenderedView]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted views but {} ground-truth views", pred.len(), gt.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Shape(format!(
                "view {i}: resolution {}x{} vs {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
    }
    Ok(())
}

/// Pixels valid in both renders, pooled over all frames.
fn joint_pixels<'a>(pred: &'a [RenderedView], gt: &'a [RenderedView]) -> impl Iterator<Item = (&'a RenderedView, &'a RenderedView, usize)> {
    pred.iter()
        .zip(gt)
        .flat_map(|(p, g)| (0..p.valid.len()).filter(|&i| p.valid[i] && g.valid[i]).map(move |i| (p, g, i)))
}

/// MAE, RMSE, AbsRel and SqRel (squared error over d*) on the joint valid set.
pub fn depth_metrics(pred: &[RenderedView], gt: &[RenderedView]) -> Result<DepthMetrics> {
    check_pairs(pred, gt)?;
    let mut m = DepthMetrics::default();
    let (mut ae, mut se) = (0.0, 0.0);
    for (p, g, i) in joint_pixels(pred, gt) {
        let (d, ds) = (p.depth[i], g.depth[i]);
        let e = d - ds;
        ae += e.abs();
        se += e * e;
        m.abs_rel += e.abs() / ds;
        m.sq_rel += e * e / ds;
        m.pixels += 1;
    }
    if m.pixels == 0 {
        return Err(Error::UndefinedMetric("no pixel is valid in both prediction and ground truth".into()));
    }
    let n = m.pixels as f64;
    m.mae = ae / n;
    m.rmse = (se / n).sqrt();
    m.abs_rel /= n;
    m.sq_rel /= n;
    Ok(m)
}

/// Mean angle in degrees between predicted and ground-truth normals.
pub fn normal_error(pred: &[RenderedView], gt: &[RenderedView]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g, i) in joint_pixels(pred, gt) {
        let (a, b) = (p.normal[i], g.normal[i]);
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        sum += dot.acos().to_degrees();
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no pixel is valid in both prediction and ground truth".into()));
    }
    Ok(sum / n as f64)
}

/// Fraction of ground-truth-valid pixels where the prediction is valid.
pub fn completeness(pred: &[RenderedView], gt: &[RenderedView]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let total: usize = gt.iter().map(|g| g.valid_count()).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("ground truth has no valid pixels".into()));
    }
    Ok(joint_pixels(pred, gt).count() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn view(w: usize, h: usize, pixels: &[(usize, f64, [f64; 3])]) -> RenderedView {
        let mut r = RenderedView::empty(w, h);
        for &(i, d, n) in pixels {
            r.valid[i] = true;
            r.depth[i] = d;
            r.normal[i] = n;
        }
        r
    }

    #[test]
    fn single_pixel_formulas() {
        let p = view(1, 1, &[(0, 2.2, [0.0, 0.0, 1.0])]);
        let g = view(1, 1, &[(0, 2.0, [0.0, 0.0, 1.0])]);
        let m = depth_metrics(&[p], &[g]).unwrap();
        assert!((m.mae - 0.2).abs() < 1e-12);
        assert!((m.rmse - 0.2).abs() < 1e-12);
        assert!((m.abs_rel - 0.1).abs() < 1e-12);
        // squared error over d*, not d*^2
        assert!((m.sq_rel - 0.02).abs() < 1e-12);
    }

    #[test]
    fn identity_is_zero_and_empty_is_undefined() {
        let g = view(2, 1, &[(0, 3.0, [1.0, 0.0, 0.0])]);
        let m = depth_metrics(&[g.clone()], &[g.clone()]).unwrap();
        assert_eq!((m.mae, m.rmse, m.abs_rel, m.sq_rel), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(normal_error(&[g.clone()], &[g.clone()]).unwrap(), 0.0);
        let e = RenderedView::empty(2, 1);
        assert!(matches!(depth_metrics(&[e.clone()], &[g.clone()]), Err(Error::UndefinedMetric(_))));
        assert_eq!(completeness(&[e.clone()], &[g]).unwrap(), 0.0);
        assert!(matches!(completeness(&[e.clone()], &[e]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn normal_angles() {
        let a = view(1, 1, &[(0, 1.0, [0.0, 0.0, 1.0])]);
        let b = view(1, 1, &[(0, 1.0, [0.0, 1.0, 0.0])]);
        let c = view(1, 1, &[(0, 1.0, [0.0, 0.0, -1.0])]);
        assert!((normal_error(&[a.clone()], &[b]).unwrap() - 90.0).abs() < 1e-12);
        assert!((normal_error(&[a], &[c]).unwrap() - 180.0).abs() < 1e-12);
    }

    #[test]
    fn half_covered_completeness() {
        let g = view(4, 1, &[(0, 1.0, [0.0; 3]), (1, 1.0, [0.0; 3]), (2, 1.0, [0.0; 3]), (3, 1.0, [0.0; 3])]);
        let p = view(4, 1, &[(1, 1.0, [0.0; 3]), (2, 1.0, [0.0; 3])]);
        assert_eq!(completeness(&[p], &[g]).unwrap(), 0.5);
    }

    fn random_view(rng: &mut impl Rng, w: usize, h: usize) -> RenderedView {
        let mut r = RenderedView::empty(w, h);
        for i in 0..w * h {
            if rng.gen_bool(0.6) {
                r.valid[i] = true;
                r.depth[i] = rng.gen_range(0.5..5.0);
                let n = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
                let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                r.normal[i] = n.map(|c| c / l);
            }
        }
        r
    }

    #[test]
    fn pooled_frames_match_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pred: Vec<_> = (0..3).map(|_| random_view(&mut rng, 9, 7)).collect();
        let gt: Vec<_> = (0..3).map(|_| random_view(&mut rng, 9, 7)).collect();
        let (mut n, mut ae, mut se, mut ar, mut sr, mut ang) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for f in 0..3 {
            for y in 0..7 {
                for x in 0..9 {
                    let i = y * 9 + x;
                    if pred[f].valid[i] && gt[f].valid[i] {
                        let e = pred[f].depth[i] - gt[f].depth[i];
                        n += 1.0;
                        ae += e.abs();
                        se += e * e;
                        ar += e.abs() / gt[f].depth[i];
                        sr += e * e / gt[f].depth[i];
                        let d: f64 = (0..3).map(|k| pred[f].normal[i][k] * gt[f].normal[i][k]).sum();
                        ang += d.clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI;
                    }
                }
            }
        }
        let m = depth_metrics(&pred, &gt).unwrap();
        assert!((m.mae - ae / n).abs() < 1e-12);
        assert!((m.rmse - (se / n).sqrt()).abs() < 1e-12);
        assert!((m.abs_rel - ar / n).abs() < 1e-12);
        assert!((m.sq_rel - sr / n).abs() < 1e-12);
        assert!((normal_error(&pred, &gt).unwrap() - ang / n).abs() < 1e-12);
    }

    #[test]
    fn mask_contract() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pred = random_view(&mut rng, 8, 8);
        let gt = random_view(&mut rng, 8, 8);
        let base = depth_metrics(&[pred.clone()], &[gt.clone()]).unwrap();
        let base_c = completeness(&[pred.clone()], &[gt.clone()]).unwrap();
        let holes: Vec<usize> = (0..64).filter(|&i| !pred.valid[i] && !gt.valid[i]).collect();
        assert!(!holes.is_empty());
        let mut more_pred = pred.clone();
        more_pred.valid[holes[0]] = true;
        more_pred.depth[holes[0]] = 1.0;
        assert_eq!(depth_metrics(&[more_pred.clone()], &[gt.clone()]).unwrap(), base);
        assert_eq!(completeness(&[more_pred], &[gt.clone()]).unwrap(), base_c);
        let mut more_gt = gt.clone();
        more_gt.valid[holes[0]] = true;
        more_gt.depth[holes[0]] = 1.0;
        assert_eq!(depth_metrics(&[pred.clone()], &[more_gt.clone()]).unwrap(), base);
        assert!(completeness(&[pred], &[more_gt]).unwrap() < base_c);
    }

    #[test]
    fn mismatched_resolution_rejected() {
        let a = RenderedView::empty(2, 2);
        let b = RenderedView::empty(2, 3);
        assert!(matches!(depth_metrics(&[a], &[b]), Err(Error::Shape(_))));
    }
}

use crate::geometry::{FeatureMap, ImageRgb};

pub const PATCH: usize = 8;
pub const DESCRIPTOR_DIM: usize = 14;

/// Handcrafted patch descriptor, stride `patch`:
/// mean rgb (3), rgb standard deviation (3), mean absolute horizontal
/// differences (3), mean absolute vertical differences (3), patch center
/// normalized to [0, 1] (2). Images are edge-padded to a multiple of `patch`.
pub fn toy_descriptor(image: &ImageRgb, patch: usize) -> FeatureMap {
    let (w, h) = (image.width, image.height);
    let (pw, ph) = (w.div_ceil(patch), h.div_ceil(patch));
    let (wp, hp) = (pw * patch, ph * patch);
    let px = |c: usize, y: usize, x: usize| image.at(c, y.min(h - 1), x.min(w - 1)) as f64;
    let plane = pw * ph;
    let mut data = vec![0.0f32; DESCRIPTOR_DIM * plane];
    let n = (patch * patch) as f64;
    for i in 0..ph {
        for j in 0..pw {
            let cell = i * pw + j;
            for c in 0..3 {
                let (mut s, mut s2, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0);
                for y in i * patch..(i + 1) * patch {
                    for x in j * patch..(j + 1) * patch {
                        let v = px(c, y, x);
                        s += v;
                        s2 += v * v;
                        if x + 1 < wp {
                            gx += (px(c, y, x + 1) - v).abs();
                        }
                        if y + 1 < hp {
                            gy += (px(c, y + 1, x) - v).abs();
                        }
                    }
                }
                let mean = s / n;
                data[c * plane + cell] = mean as f32;
                data[(3 + c) * plane + cell] = (s2 / n - mean * mean).max(0.0).sqrt() as f32;
                data[(6 + c) * plane + cell] = (gx / n) as f32;
                data[(9 + c) * plane + cell] = (gy / n) as f32;
            }
            data[12 * plane + cell] = ((j as f64 + 0.5) / pw as f64) as f32;
            data[13 * plane + cell] = ((i as f64 + 0.5) / ph as f64) as f32;
        }
    }
    FeatureMap::new(DESCRIPTOR_DIM, ph, pw, patch, data).expect("descriptor shape")
}

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::warp::{for_each_covered, sample_bilinear};
use crate::alignment::{PanoramaLayout, Rect};
use crate::{DeviceId, Image};

/// Weight of the prior pulling every gain towards 1.
pub const GAIN_REGULARIZATION: f64 = 0.1;

const MIN_GAIN: f64 = 1e-3;

/// A frame's normalized luma resampled onto the panorama grid, restricted to
/// the bounding box of its quad.
struct WarpedLuma {
    bbox: Rect,
    values: Vec<f32>,
    covered: Vec<bool>,
}

impl WarpedLuma {
    fn new(img: &Image, layout: &PanoramaLayout, device: &DeviceId) -> Option<Self> {
        let t = layout.placements.get(device)?;
        let inverse = t.inverse()?;
        let bbox = Rect::hull(t.frame_corners(img.width(), img.height()))?;
        let gray = img.to_gray();
        let n = bbox.area() as usize;
        let mut values = vec![0f32; n];
        let mut covered = vec![false; n];
        let mut px = [0f32; 3];
        for_each_covered(t, &inverse, img.dimensions(), bbox, |x, y, sx, sy| {
            sample_bilinear(&gray, sx, sy, &mut px);
            let i = y as usize * bbox.width as usize + x as usize;
            values[i] = px[0] / 255.0;
            covered[i] = true;
        });
        Some(Self { bbox, values, covered })
    }

    fn at(&self, x: i64, y: i64) -> Option<f32> {
        let i = (y - self.bbox.y) as usize * self.bbox.width as usize + (x - self.bbox.x) as usize;
        self.covered[i].then(|| self.values[i])
    }
}

/// Least-squares scalar gain per device.
///
/// Minimizes `sum over overlapping pixel pairs (g_i I_i - g_j I_j)^2 +
/// lambda sum (g_i - 1)^2` on luma normalized to `[0, 1]`, with
/// `lambda = GAIN_REGULARIZATION`. Devices without overlaps, or not placed in
/// the layout, keep gain 1. Gains are clamped to stay positive.
pub fn estimate_gains(images: &BTreeMap<DeviceId, Image>, layout: &PanoramaLayout) -> BTreeMap<DeviceId, f64> {
    let mut gains: BTreeMap<DeviceId, f64> = images.keys().map(|d| (d.clone(), 1.0)).collect();
    let warped: Vec<(DeviceId, WarpedLuma)> = images
        .iter()
        .filter_map(|(d, img)| Some((d.clone(), WarpedLuma::new(img, layout, d)?)))
        .collect();
    let n = warped.len();
    if n < 2 {
        return gains;
    }

    let mut a = DMatrix::<f64>::identity(n, n) * GAIN_REGULARIZATION;
    let b = DVector::<f64>::from_element(n, GAIN_REGULARIZATION);
    for i in 0..n {
        for j in i + 1..n {
            let (wi, wj) = (&warped[i].1, &warped[j].1);
            let x0 = wi.bbox.x.max(wj.bbox.x);
            let y0 = wi.bbox.y.max(wj.bbox.y);
            let x1 = wi.bbox.right().min(wj.bbox.right());
            let y1 = wi.bbox.bottom().min(wj.bbox.bottom());
            let (mut sii, mut sjj, mut sij) = (0f64, 0f64, 0f64);
            for y in y0..y1 {
                for x in x0..x1 {
                    if let (Some(vi), Some(vj)) = (wi.at(x, y), wj.at(x, y)) {
                        let (vi, vj) = (vi as f64, vj as f64);
                        sii += vi * vi;
                        sjj += vj * vj;
                        sij += vi * vj;
                    }
                }
            }
            a[(i, i)] += sii;
            a[(j, j)] += sjj;
            a[(i, j)] -= sij;
            a[(j, i)] -= sij;
        }
    }

    if let Some(solution) = a.lu().solve(&b) {
        for ((device, _), g) in warped.iter().zip(solution.iter()) {
            gains.insert(device.clone(), g.max(MIN_GAIN));
        }
    }
    gains
}

use std::collections::BTreeMap;

use super::warp::{for_each_covered, sample_bilinear};
use crate::alignment::{PanoramaLayout, Point};
use crate::{DeviceId, Image};

/// Longest side of the preview panorama that is broadcast to clients.
pub const PREVIEW_PANORAMA_MAX_DIM: u32 = 1200;

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResult {
    pub panorama: Image,
    /// Warped frame corners in panorama pixel coordinates (origin at the
    /// top-left of `panorama`).
    pub device_quads: BTreeMap<DeviceId, [Point; 4]>,
    /// Fraction of panorama pixels covered by at least one frame.
    pub coverage_fraction: f64,
}

impl CompositeResult {
    /// Shrinks the panorama (and quads) so its longest side is at most
    /// `max_dim`.
    pub fn fit_within(self, max_dim: u32) -> CompositeResult {
        let (w, h) = self.panorama.dimensions();
        if w.max(h) <= max_dim {
            return self;
        }
        let panorama = crate::imaging::downscale_to_max_dim(&self.panorama, max_dim);
        let sx = panorama.width() as f64 / w as f64;
        let sy = panorama.height() as f64 / h as f64;
        let device_quads = self
            .device_quads
            .into_iter()
            .map(|(d, q)| (d, q.map(|p| Point::new(p.x * sx, p.y * sy))))
            .collect();
        CompositeResult { panorama, device_quads, coverage_fraction: self.coverage_fraction }
    }
}

/// Paints placed frames into the layout bounds in the order given, later
/// frames over earlier ones, with no blending or gain. `frames` should be in
/// device join order. Unplaced devices are skipped.
pub fn composite_preview(frames: &[(DeviceId, Image)], layout: &PanoramaLayout) -> CompositeResult {
    let placed: Vec<&(DeviceId, Image)> = frames
        .iter()
        .filter(|(d, img)| {
            layout.placements.get(d).is_some_and(|t| t.is_invertible()) && layout.sizes.get(d) == Some(&img.dimensions())
        })
        .collect();
    if placed.is_empty() {
        return CompositeResult {
            panorama: Image::filled(1, 1, &[0, 0, 0]),
            device_quads: BTreeMap::new(),
            coverage_fraction: 0.0,
        };
    }

    let canvas = layout.bounds;
    let channels: u8 = if placed.iter().all(|(_, img)| img.channels() == 1) { 1 } else { 3 };
    let (cw, chh) = (canvas.width as usize, canvas.height as usize);
    let c = channels as usize;
    let mut data = vec![0u8; cw * chh * c];
    let mut covered = vec![false; cw * chh];
    let mut quads = BTreeMap::new();
    let mut px = [0f32; 3];

    for (device, img) in placed {
        let t = layout.placements[device];
        let inverse = t.inverse().expect("filtered to invertible");
        let gray = img.channels() == 1;
        for_each_covered(&t, &inverse, img.dimensions(), canvas, |x, y, sx, sy| {
            sample_bilinear(img, sx, sy, &mut px);
            if gray {
                px = [px[0]; 3];
            }
            let i = y as usize * cw + x as usize;
            covered[i] = true;
            for k in 0..c {
                data[i * c + k] = px[k].round().clamp(0.0, 255.0) as u8;
            }
        });
        let origin = Point::new(canvas.x as f64, canvas.y as f64);
        let quad = layout.quad(device).expect("placed").map(|p| Point::new(p.x - origin.x, p.y - origin.y));
        quads.insert(device.clone(), quad);
    }

    let coverage_fraction = covered.iter().filter(|&&b| b).count() as f64 / covered.len() as f64;
    CompositeResult {
        panorama: Image::new(canvas.width, canvas.height, channels, data).expect("canvas buffer"),
        device_quads: quads,
        coverage_fraction,
    }
}

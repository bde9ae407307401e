use std::collections::BTreeMap;

use super::warp::{for_each_covered, sample_bilinear};
use super::CompositeError;
use crate::alignment::PanoramaLayout;
use crate::{DeviceId, Image};

/// Feathering weight of source position `(sx, sy)` in a `w x h` frame.
///
/// The product of the normalized distances to the nearest vertical and
/// horizontal edges: 1 at the centre, falling linearly towards the border
/// but never reaching 0 on a sampled pixel.
pub fn feather_weight(sx: f64, sy: f64, w: u32, h: u32) -> f32 {
    let axis = |s: f64, n: u32| {
        let d = s.min((n - 1) as f64 - s).max(0.0) + 1.0;
        d / ((n as f64 + 1.0) / 2.0)
    };
    (axis(sx, w) * axis(sy, h)) as f32
}

/// Renders the final panorama: each placed frame is scaled by its gain and
/// the overlaps are averaged with feathering weights. Pixels that no frame
/// covers are black.
pub fn feather_blend_final(
    images: &BTreeMap<DeviceId, Image>,
    layout: &PanoramaLayout,
    gains: &BTreeMap<DeviceId, f64>,
) -> Result<Image, CompositeError> {
    let canvas = layout.bounds;
    let (cw, chh) = (canvas.width as usize, canvas.height as usize);
    let channels: u8 = if images.values().all(|i| i.channels() == 1) { 1 } else { 3 };
    let c = channels as usize;
    let mut acc = vec![0f32; cw * chh * c];
    let mut weight = vec![0f32; cw * chh];
    let mut px = [0f32; 3];

    for (device, t) in &layout.placements {
        let img = images.get(device).ok_or_else(|| CompositeError::MissingImage(device.clone()))?;
        let expected = layout.sizes[device];
        if img.dimensions() != expected {
            return Err(CompositeError::SizeMismatch { device: device.clone(), expected, actual: img.dimensions() });
        }
        let inverse = t.inverse().ok_or_else(|| CompositeError::SingularTransform(device.to_string()))?;
        let gain = gains.get(device).copied().unwrap_or(1.0) as f32;
        let (w, h) = img.dimensions();
        let gray = img.channels() == 1;
        for_each_covered(t, &inverse, (w, h), canvas, |x, y, sx, sy| {
            sample_bilinear(img, sx, sy, &mut px);
            if gray {
                px = [px[0]; 3];
            }
            let wt = feather_weight(sx, sy, w, h);
            let i = y as usize * cw + x as usize;
            weight[i] += wt;
            for k in 0..c {
                acc[i * c + k] += wt * (gain * px[k]).min(255.0);
            }
        });
    }

    let data = acc
        .chunks(c)
        .zip(&weight)
        .flat_map(|(sum, &wt)| {
            sum.iter()
                .map(move |s| if wt > 0.0 { (s / wt).round().clamp(0.0, 255.0) as u8 } else { 0 })
        })
        .collect();
    Ok(Image::new(canvas.width, canvas.height, channels, data).expect("canvas buffer"))
}

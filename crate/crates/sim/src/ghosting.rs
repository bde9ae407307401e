//! Ghosting of a moving sprite when overlapping tiles are captured at
//! different instants versus all at once.

use std::collections::BTreeMap;

use copano_core::compositing::{feather_blend_final, CompositeError};
use copano_core::{AffineTransform, DeviceId, Image, PanoramaLayout};

use crate::scene::{is_magenta, render_viewport, Scene, SceneError, Sprite, Viewport, VirtualCamera};

/// Blobs smaller than this many pixels are not counted as sprite copies.
pub const MIN_BLOB_PX: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CaptureMode {
    /// Tile `i` is captured at `t0 + i * dt_s`, like one camera swept across.
    Sequential { dt_s: f64 },
    /// Every tile is captured at `t0`.
    Synchronized,
}

impl CaptureMode {
    pub fn capture_time(&self, t0: f64, index: usize) -> f64 {
        match *self {
            CaptureMode::Sequential { dt_s } => t0 + dt_s * index as f64,
            CaptureMode::Synchronized => t0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GhostingError {
    #[error("tiles {0} and {1} do not both see a sprite inside their overlap")]
    SpriteNotInOverlap(usize, usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

#[derive(Clone, Debug)]
pub struct GhostingReport {
    /// Largest distance between the sprite centroids two overlapping tiles
    /// saw inside their overlap, in scene pixels.
    pub displacement_px: f64,
    /// Distinct sprite blobs in the blended panorama.
    pub duplicate_count: usize,
    pub capture_times: Vec<f64>,
    pub panorama: Image,
}

/// The bundled two-tile setup: 480x360 tiles with 1/5 overlap and one
/// radius-8 sprite moving at 30 px/s through the overlap.
pub fn bundled_setup() -> (Scene, Vec<Viewport>) {
    let scene = Scene::new(
        copano_core::texture::procedural(1300, 600, 11),
        vec![Sprite::moving_disc(8, 596.0, 292.0, 30.0, 0.0)],
    );
    (scene, vec![Viewport::new(200.0, 120.0, 480, 360), Viewport::new(584.0, 120.0, 480, 360)])
}

/// Captures `tiles` under `mode`, blends them with their ground-truth
/// placements and measures how the sprite disagrees between tiles.
pub fn ghosting_metric(scene: &Scene, tiles: &[Viewport], mode: CaptureMode, t0: f64) -> Result<GhostingReport, GhostingError> {
    let times: Vec<f64> = (0..tiles.len()).map(|i| mode.capture_time(t0, i)).collect();
    let mut shots = Vec::with_capacity(tiles.len());
    for (v, &t) in tiles.iter().zip(&times) {
        shots.push(render_viewport(scene, &VirtualCamera::native(*v, 0.0), t)?);
    }

    let mut displacement: Option<f64> = None;
    for i in 0..tiles.len() {
        for j in i + 1..tiles.len() {
            let Some(overlap) = overlap_rect(&tiles[i], &tiles[j]) else { continue };
            let a = centroid_in(&shots[i], &tiles[i], overlap);
            let b = centroid_in(&shots[j], &tiles[j], overlap);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    let d = (a.0 - b.0).hypot(a.1 - b.1);
                    displacement = Some(displacement.map_or(d, |m: f64| m.max(d)));
                }
                _ => return Err(GhostingError::SpriteNotInOverlap(i, j)),
            }
        }
    }
    let displacement_px = displacement.ok_or(GhostingError::SpriteNotInOverlap(0, tiles.len().saturating_sub(1)))?;

    let ids: Vec<DeviceId> = (0..tiles.len()).map(|i| DeviceId::new(format!("tile{i}"))).collect();
    let (x0, y0) = tiles[0].origin();
    let placements: BTreeMap<DeviceId, AffineTransform> = ids
        .iter()
        .zip(tiles)
        .map(|(d, v)| {
            let (x, y) = v.origin();
            (d.clone(), AffineTransform::translation((x - x0) as f64, (y - y0) as f64))
        })
        .collect();
    let sizes = ids.iter().zip(tiles).map(|(d, v)| (d.clone(), (v.width, v.height))).collect();
    let layout = PanoramaLayout::from_placements(ids[0].clone(), placements, sizes);
    let images: BTreeMap<DeviceId, Image> = ids.iter().cloned().zip(shots).collect();
    let panorama = feather_blend_final(&images, &layout, &BTreeMap::new())?;
    let duplicate_count = count_blobs(&panorama, MIN_BLOB_PX);

    Ok(GhostingReport { displacement_px, duplicate_count, capture_times: times, panorama })
}

/// Scene-space overlap `[x0, x1) x [y0, y1)` of two viewports.
fn overlap_rect(a: &Viewport, b: &Viewport) -> Option<(i64, i64, i64, i64)> {
    let (ax, ay) = a.origin();
    let (bx, by) = b.origin();
    let x0 = ax.max(bx);
    let y0 = ay.max(by);
    let x1 = (ax + a.width as i64).min(bx + b.width as i64);
    let y1 = (ay + a.height as i64).min(by + b.height as i64);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Scene-space centroid of the magenta pixels `shot` shows inside `rect`.
fn centroid_in(shot: &Image, view: &Viewport, rect: (i64, i64, i64, i64)) -> Option<(f64, f64)> {
    let (vx, vy) = view.origin();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in rect.1..rect.3 {
        for x in rect.0..rect.2 {
            if is_magenta(shot.pixel((x - vx) as u32, (y - vy) as u32)) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Number of 4-connected magenta blobs of at least `min_px` pixels.
pub fn count_blobs(img: &Image, min_px: usize) -> usize {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mask: Vec<bool> = (0..w * h).map(|i| is_magenta(img.pixel((i % w) as u32, (i / w) as u32))).collect();
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size >= min_px {
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_sprite_never_ghosts() {
        let (mut scene, tiles) = bundled_setup();
        scene.sprites[0].vx = 0.0;
        for mode in [CaptureMode::Synchronized, CaptureMode::Sequential { dt_s: 1.0 }] {
            let r = ghosting_metric(&scene, &tiles, mode, 0.0).unwrap();
            assert_eq!(r.displacement_px, 0.0);
            assert_eq!(r.duplicate_count, 1);
        }
    }

    #[test]
    fn sprite_outside_the_overlap_is_a_configuration_error() {
        let (mut scene, tiles) = bundled_setup();
        scene.sprites[0].x0 = 300.0;
        let err = ghosting_metric(&scene, &tiles, CaptureMode::Synchronized, 0.0).unwrap_err();
        assert!(matches!(err, GhostingError::SpriteNotInOverlap(0, 1)));
    }

    #[test]
    fn blobs_are_counted_by_connectivity() {
        let mut img = Image::filled(20, 10, &[100, 110, 100]);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2), (10, 5), (11, 5), (11, 6), (10, 6), (18, 9)] {
            img.pixel_mut(x, y).copy_from_slice(&[255, 0, 255]);
        }
        assert_eq!(count_blobs(&img, 1), 3);
        assert_eq!(count_blobs(&img, 4), 2);
    }
}

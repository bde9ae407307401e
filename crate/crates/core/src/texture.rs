//! Procedural, non-repetitive textures for synthetic scenes.
//!
//! Scenes are layered value noise plus a scatter of flat-shaded rectangles,
//! discs and bars, which gives the corner detector plenty to work with and
//! never repeats, so frames with no true overlap do not register by accident.
//!
//! Colors are kept low in saturation with green never below the smaller of
//! red and blue. Saturated magenta therefore never occurs in a generated
//! texture, and the simulator uses it to key out moving sprites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Image;

/// Seed of the bundled default scene.
pub const DEFAULT_SCENE_SEED: u64 = 20_150_418;

/// Generates a `width x height` RGB texture; identical for identical seeds.
pub fn procedural(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as usize, height as usize);
    let mut value = vec![0f32; w * h];

    for (cell, amp) in [(96.0, 70.0), (37.0, 45.0), (13.0, 30.0), (5.0, 18.0)] {
        add_value_noise(&mut value, w, h, cell, amp, &mut rng);
    }

    let shapes = (w * h / 900).max(4);
    for _ in 0..shapes {
        let level: f32 = rng.random_range(-90.0..90.0);
        let cx = rng.random_range(0.0..w as f32);
        let cy = rng.random_range(0.0..h as f32);
        match rng.random_range(0..3) {
            0 => {
                let hw = rng.random_range(3.0..22.0f32);
                let hh = rng.random_range(3.0..22.0f32);
                fill(&mut value, w, h, cx - hw, cy - hh, cx + hw, cy + hh, level, |_, _| true);
            }
            1 => {
                let r = rng.random_range(3.0..16.0f32);
                fill(&mut value, w, h, cx - r, cy - r, cx + r, cy + r, level, |x, y| {
                    (x - cx).powi(2) + (y - cy).powi(2) <= r * r
                });
            }
            _ => {
                let (len, thick) = (rng.random_range(10.0..40.0f32), rng.random_range(1.5..4.0f32));
                if rng.random_bool(0.5) {
                    fill(&mut value, w, h, cx - len, cy - thick, cx + len, cy + thick, level, |_, _| true);
                } else {
                    fill(&mut value, w, h, cx - thick, cy - len, cx + thick, cy + len, level, |_, _| true);
                }
            }
        }
    }

    // Slowly varying tints: red and blue at most equal to green.
    let mut tint_r = vec![0f32; w * h];
    let mut tint_b = vec![0f32; w * h];
    add_value_noise(&mut tint_r, w, h, 160.0, 1.0, &mut rng);
    add_value_noise(&mut tint_b, w, h, 160.0, 1.0, &mut rng);

    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let g = (128.0 + value[i]).clamp(8.0, 247.0);
        let r = g * (0.86 + 0.07 * tint_r[i]).min(1.0);
        let b = g * (0.80 + 0.10 * tint_b[i]).min(1.0);
        data.extend_from_slice(&[r.round() as u8, g.round() as u8, b.round() as u8]);
    }
    Image::new(width, height, 3, data).expect("texture buffer matches dimensions")
}

#[allow(clippy::too_many_arguments)]
fn fill(
    value: &mut [f32],
    w: usize,
    h: usize,
    x0: f32,
    y0: f32,
    x1: f32,
    y1: f32,
    level: f32,
    inside: impl Fn(f32, f32) -> bool,
) {
    let xs = (x0.max(0.0) as usize)..(x1.max(0.0).ceil() as usize).min(w);
    let ys = (y0.max(0.0) as usize)..(y1.max(0.0).ceil() as usize).min(h);
    for y in ys {
        for x in xs.clone() {
            if inside(x as f32, y as f32) {
                value[y * w + x] = level;
            }
        }
    }
}

/// Adds smoothstep-interpolated lattice noise in `[-amp, amp]`.
fn add_value_noise(out: &mut [f32], w: usize, h: usize, cell: f32, amp: f32, rng: &mut ChaCha8Rng) {
    let gw = (w as f32 / cell).ceil() as usize + 2;
    let gh = (h as f32 / cell).ceil() as usize + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    for y in 0..h {
        let fy = y as f32 / cell;
        let (gy, ty) = (fy as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f32 / cell;
            let (gx, tx) = (fx as usize, smooth(fx.fract()));
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(gx, gy) + (l(gx + 1, gy) - l(gx, gy)) * tx;
            let bottom = l(gx, gy + 1) + (l(gx + 1, gy + 1) - l(gx, gy + 1)) * tx;
            out[y * w + x] += amp * (top + (bottom - top) * ty);
        }
    }
}

use std::f32::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Image;

/// Length of every descriptor, in bits.
pub const DESCRIPTOR_BITS: usize = 256;

/// Feature budget for one preview-sized frame.
pub const DEFAULT_MAX_FEATURES: usize = 500;

const PATCH_RADIUS: i32 = 13;
const BOX_RADIUS: i32 = 2;
/// Features closer than this to any image edge cannot be described.
const BORDER: i32 = PATCH_RADIUS + BOX_RADIUS + 1;
const ORIENTATION_BINS: usize = 30;
const HARRIS_K: f32 = 0.04;
const NMS_RADIUS: i32 = 2;
const RELATIVE_THRESHOLD: f32 = 1e-4;
const ABSOLUTE_THRESHOLD: f32 = 1e4;

/// A steered binary intensity-comparison descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; DESCRIPTOR_BITS / 64]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

/// An interest point with sub-pixel position and its descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub x: f32,
    pub y: f32,
    /// Harris corner response.
    pub score: f32,
    /// Patch orientation in radians, from the intensity centroid.
    pub angle: f32,
    pub descriptor: Descriptor,
}

/// Detects up to `max_features` Harris corners and describes them.
///
/// `seed` fixes the binary test pattern; descriptors are only comparable
/// between frames described with the same seed. Results are sorted by
/// descending score, ties broken by row then column, so the output is a
/// pure function of `(img, max_features, seed)`.
pub fn detect_features(img: &Image, max_features: usize, seed: u64) -> Vec<Feature> {
    let (w, h) = (img.width() as i32, img.height() as i32);
    if w <= 2 * BORDER || h <= 2 * BORDER || max_features == 0 {
        return Vec::new();
    }
    let gray = img.luma();
    let response = harris_response(&gray, w as usize, h as usize);
    let max_response = response.iter().copied().fold(0f32, f32::max);
    let threshold = (max_response * RELATIVE_THRESHOLD).max(ABSOLUTE_THRESHOLD);

    let at = |x: i32, y: i32| response[(y * w + x) as usize];
    let mut corners = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let r = at(x, y);
            if r <= threshold || !is_local_max(&at, x, y, r) {
                continue;
            }
            corners.push((x, y, r));
        }
    }
    corners.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    corners.truncate(max_features);

    let smoothed = box_smooth(&gray, w as usize, h as usize, BOX_RADIUS as usize);
    let pattern = SteeredPattern::new(seed);
    corners
        .into_iter()
        .map(|(x, y, score)| {
            let dx = parabolic_offset(at(x - 1, y), score, at(x + 1, y));
            let dy = parabolic_offset(at(x, y - 1), score, at(x, y + 1));
            let angle = centroid_angle(&gray, w, x, y);
            Feature {
                x: x as f32 + dx,
                y: y as f32 + dy,
                score,
                angle,
                descriptor: pattern.describe(&smoothed, w, x, y, angle),
            }
        })
        .collect()
}

/// Non-maximum suppression with a raster-order tie rule so that a plateau
/// keeps exactly one pixel.
fn is_local_max(at: &impl Fn(i32, i32) -> f32, x: i32, y: i32, r: f32) -> bool {
    for ny in y - NMS_RADIUS..=y + NMS_RADIUS {
        for nx in x - NMS_RADIUS..=x + NMS_RADIUS {
            if (nx, ny) == (x, y) {
                continue;
            }
            let n = at(nx, ny);
            let earlier = (ny, nx) < (y, x);
            if n > r || (earlier && n == r) {
                return false;
            }
        }
    }
    true
}

fn parabolic_offset(left: f32, center: f32, right: f32) -> f32 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < f32::EPSILON {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

fn harris_response(gray: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut ixx = vec![0f32; w * h];
    let mut iyy = vec![0f32; w * h];
    let mut ixy = vec![0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| gray[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = binomial_smooth(&ixx, w, h);
    let syy = binomial_smooth(&iyy, w, h);
    let sxy = binomial_smooth(&ixy, w, h);
    sxx.iter()
        .zip(&syy)
        .zip(&sxy)
        .map(|((&a, &b), &c)| {
            let det = a * b - c * c;
            let trace = a + b;
            det - HARRIS_K * trace * trace
        })
        .collect()
}

/// Separable [1 4 6 4 1] / 16 window, edges clamped.
fn binomial_smooth(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in K.iter().enumerate() {
                let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += wt * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in K.iter().enumerate() {
                let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += wt * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Box mean of side `2r + 1` through a summed-area table; edges clamped.
fn box_smooth(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    let mut sat = vec![0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0f64;
        for x in 0..w {
            row += src[y * w + x] as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out[y * w + x] = (sum / ((x1 - x0) * (y1 - y0)) as f64) as f32;
        }
    }
    out
}

fn centroid_angle(gray: &[f32], w: i32, cx: i32, cy: i32) -> f32 {
    let (mut m10, mut m01) = (0f32, 0f32);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        for dx in -PATCH_RADIUS..=PATCH_RADIUS {
            if dx * dx + dy * dy > PATCH_RADIUS * PATCH_RADIUS {
                continue;
            }
            let v = gray[((cy + dy) * w + cx + dx) as usize];
            m10 += dx as f32 * v;
            m01 += dy as f32 * v;
        }
    }
    m01.atan2(m10)
}

/// 256 point pairs drawn once per seed, pre-rotated into orientation bins.
struct SteeredPattern {
    bins: Vec<Vec<[(i32, i32); 2]>>,
}

impl SteeredPattern {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, PATCH_RADIUS as f32 / 2.5).expect("finite sigma");
        let limit = PATCH_RADIUS as f32;
        let mut point = || loop {
            let (x, y) = (normal.sample(&mut rng), normal.sample(&mut rng));
            if x * x + y * y <= limit * limit {
                return (x, y);
            }
        };
        let base: Vec<[(f32, f32); 2]> = (0..DESCRIPTOR_BITS).map(|_| [point(), point()]).collect();

        let bins = (0..ORIENTATION_BINS)
            .map(|b| {
                let theta = 2.0 * PI * b as f32 / ORIENTATION_BINS as f32;
                let (s, c) = theta.sin_cos();
                let rot = |(x, y): (f32, f32)| ((c * x - s * y).round() as i32, (s * x + c * y).round() as i32);
                base.iter().map(|[p, q]| [rot(*p), rot(*q)]).collect()
            })
            .collect();
        Self { bins }
    }

    fn describe(&self, smoothed: &[f32], w: i32, cx: i32, cy: i32, angle: f32) -> Descriptor {
        let turns = angle.rem_euclid(2.0 * PI) / (2.0 * PI);
        let bin = (turns * ORIENTATION_BINS as f32).round() as usize % ORIENTATION_BINS;
        let at = |(dx, dy): (i32, i32)| smoothed[((cy + dy) * w + cx + dx) as usize];
        let mut words = [0u64; DESCRIPTOR_BITS / 64];
        for (i, [p, q]) in self.bins[bin].iter().enumerate() {
            if at(*p) < at(*q) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Descriptor(words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(size: u32, square: u32) -> Image {
        Image::from_fn(size, size, |x, y| [if (x / square + y / square) % 2 == 0 { 30 } else { 220 }])
    }

    #[test]
    fn uniform_image_has_no_features() {
        assert!(detect_features(&Image::filled(120, 90, &[128]), 500, 0).is_empty());
        assert!(detect_features(&Image::filled(120, 90, &[90, 10, 200]), 500, 0).is_empty());
    }

    #[test]
    fn tiny_images_yield_nothing() {
        assert!(detect_features(&checkerboard(20, 5), 500, 0).is_empty());
    }

    #[test]
    fn checkerboard_corners_are_found_at_grid_points() {
        let img = checkerboard(100, 10);
        let feats = detect_features(&img, 500, 0);
        assert!(!feats.is_empty());
        // Square boundaries sit between pixels 10k-1 and 10k, i.e. at 10k - 0.5.
        for f in &feats {
            let near = |v: f32| ((v + 0.5) / 10.0).round() * 10.0 - 0.5;
            assert!((f.x - near(f.x)).abs() <= 2.0 && (f.y - near(f.y)).abs() <= 2.0, "{f:?}");
            assert!(f.x >= BORDER as f32 - 1.0 && f.x <= 100.0 - BORDER as f32);
        }
    }

    #[test]
    fn output_sorted_and_bounded() {
        let img = crate::texture::procedural(160, 120, 3);
        let feats = detect_features(&img, 40, 0);
        assert!(feats.len() <= 40 && !feats.is_empty());
        assert!(feats.windows(2).all(|p| p[0].score >= p[1].score));
        for f in &feats {
            assert!(f.x >= 0.0 && f.x < 160.0 && f.y >= 0.0 && f.y < 120.0);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let img = crate::texture::procedural(160, 120, 9);
        assert_eq!(detect_features(&img, 200, 4), detect_features(&img, 200, 4));
        let other = detect_features(&img, 200, 5);
        assert_ne!(detect_features(&img, 200, 4)[0].descriptor, other[0].descriptor);
    }

    #[test]
    fn plateau_keeps_one_pixel() {
        let flat = |_: i32, _: i32| 1.0f32;
        assert!(!is_local_max(&flat, 5, 5, 1.0));
        let plateau = |x: i32, y: i32| if (x == 5 || x == 6) && y == 5 { 2.0 } else { 1.0 };
        assert!(is_local_max(&plateau, 5, 5, 2.0));
        assert!(!is_local_max(&plateau, 6, 5, 2.0));
    }
}

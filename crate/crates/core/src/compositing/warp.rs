use super::CompositeError;
use crate::alignment::{AffineTransform, Point, Rect};
use crate::Image;

/// Per-pixel coverage flags for a warped frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

const EDGE_EPS: f64 = 1e-7;

/// Visits every canvas pixel whose pre-image under `inverse` lies inside a
/// `src_w x src_h` frame, passing canvas-relative `(cx, cy)` and the source
/// position (already clamped into the frame). Only the bounding box of the
/// forward image of the pixel-centre rectangle is scanned.
pub(crate) fn for_each_covered(
    forward: &AffineTransform,
    inverse: &AffineTransform,
    (src_w, src_h): (u32, u32),
    canvas: Rect,
    mut visit: impl FnMut(u32, u32, f64, f64),
) {
    let (max_x, max_y) = ((src_w - 1) as f64, (src_h - 1) as f64);
    let centres = [(0.0, 0.0), (max_x, 0.0), (max_x, max_y), (0.0, max_y)].map(|(x, y)| forward.apply(Point::new(x, y)));
    let lo = |f: fn(&Point) -> f64| centres.iter().map(f).fold(f64::INFINITY, f64::min).floor() as i64;
    let hi = |f: fn(&Point) -> f64| centres.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil() as i64 + 1;
    let x0 = lo(|p| p.x).max(canvas.x);
    let y0 = lo(|p| p.y).max(canvas.y);
    let x1 = hi(|p| p.x).min(canvas.right());
    let y1 = hi(|p| p.y).min(canvas.bottom());
    for py in y0..y1 {
        for px in x0..x1 {
            let s = inverse.apply(Point::new(px as f64, py as f64));
            if s.x < -EDGE_EPS || s.y < -EDGE_EPS || s.x > max_x + EDGE_EPS || s.y > max_y + EDGE_EPS {
                continue;
            }
            visit((px - canvas.x) as u32, (py - canvas.y) as u32, s.x.clamp(0.0, max_x), s.y.clamp(0.0, max_y));
        }
    }
}

/// Bilinear sample at a position inside the frame. Every read goes through
/// a bounds-checked index.
pub(crate) fn sample_bilinear(img: &Image, sx: f64, sy: f64, out: &mut [f32]) {
    let (w, h) = img.dimensions();
    debug_assert!(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64);
    let x0 = sx.floor() as u32;
    let y0 = sy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (sx - x0 as f64) as f32;
    let fy = (sy - y0 as f64) as f32;
    let c = img.channels() as usize;
    let data = img.data();
    let at = |x: u32, y: u32, ch: usize| -> f32 {
        let i = (y as usize * w as usize + x as usize) * c + ch;
        *data.get(i).expect("sample inside source frame") as f32
    };
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let top = at(x0, y0, ch) * (1.0 - fx) + at(x1, y0, ch) * fx;
        let bottom = at(x0, y1, ch) * (1.0 - fx) + at(x1, y1, ch) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Inverse-warps `img` through `t` onto `canvas` (panorama coordinates)
/// with bilinear sampling. Uncovered pixels are black and unmasked.
pub fn warp_frame(img: &Image, t: &AffineTransform, canvas: Rect) -> Result<(Image, Mask), CompositeError> {
    let inverse = t.inverse().ok_or_else(|| CompositeError::SingularTransform(format!("{t:?}")))?;
    let c = img.channels() as usize;
    let (cw, ch) = (canvas.width as usize, canvas.height as usize);
    let mut data = vec![0u8; cw * ch * c];
    let mut bits = vec![false; cw * ch];
    let mut px = [0f32; 3];
    for_each_covered(t, &inverse, img.dimensions(), canvas, |x, y, sx, sy| {
        sample_bilinear(img, sx, sy, &mut px);
        let i = y as usize * cw + x as usize;
        bits[i] = true;
        for k in 0..c {
            data[i * c + k] = px[k].round().clamp(0.0, 255.0) as u8;
        }
    });
    let out = Image::new(canvas.width, canvas.height, img.channels(), data).expect("canvas buffer");
    Ok((out, Mask { width: canvas.width, height: canvas.height, bits }))
}

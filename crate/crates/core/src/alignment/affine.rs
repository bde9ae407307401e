use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Determinants below this magnitude are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A planar affine map `p -> A p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: Self = Self { a11: 1.0, a12: 0.0, a21: 0.0, a22: 1.0, tx: 0.0, ty: 0.0 };

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self { tx, ty, ..Self::IDENTITY }
    }

    pub const fn scaling(s: f64) -> Self {
        Self { a11: s, a12: 0.0, a21: 0.0, a22: s, tx: 0.0, ty: 0.0 }
    }

    /// Counter-clockwise rotation by `theta` radians about the origin
    /// (clockwise on screen, where y points down).
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { a11: c, a12: -s, a21: s, a22: c, tx: 0.0, ty: 0.0 }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point {
            x: self.a11 * p.x + self.a12 * p.y + self.tx,
            y: self.a21 * p.x + self.a22 * p.y + self.ty,
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() >= SINGULAR_EPS
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.abs() < SINGULAR_EPS {
            return None;
        }
        let (a11, a12, a21, a22) = (self.a22 / det, -self.a12 / det, -self.a21 / det, self.a11 / det);
        Some(Self {
            a11,
            a12,
            a21,
            a22,
            tx: -(a11 * self.tx + a12 * self.ty),
            ty: -(a21 * self.tx + a22 * self.ty),
        })
    }

    /// Largest absolute difference over the six parameters.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.params().iter().zip(other.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `[a11, a12, tx, a21, a22, ty]`.
    pub fn params(&self) -> [f64; 6] {
        [self.a11, self.a12, self.tx, self.a21, self.a22, self.ty]
    }

    /// Inverse of [`AffineTransform::params`].
    pub fn from_params(p: [f64; 6]) -> Self {
        Self { a11: p[0], a12: p[1], tx: p[2], a21: p[3], a22: p[4], ty: p[5] }
    }

    /// The four corners `(0,0) (w,0) (w,h) (0,h)` of a `w x h` frame, mapped.
    pub fn frame_corners(&self, width: u32, height: u32) -> [Point; 4] {
        let (w, h) = (width as f64, height as f64);
        [Point::new(0.0, 0.0), Point::new(w, 0.0), Point::new(w, h), Point::new(0.0, h)].map(|p| self.apply(p))
    }
}

/// Composition: `(a * b).apply(p) == a.apply(b.apply(p))`.
impl Mul for AffineTransform {
    type Output = AffineTransform;

    fn mul(self, b: AffineTransform) -> AffineTransform {
        let a = self;
        AffineTransform {
            a11: a.a11 * b.a11 + a.a12 * b.a21,
            a12: a.a11 * b.a12 + a.a12 * b.a22,
            a21: a.a21 * b.a11 + a.a22 * b.a21,
            a22: a.a21 * b.a12 + a.a22 * b.a22,
            tx: a.a11 * b.tx + a.a12 * b.ty + a.tx,
            ty: a.a21 * b.tx + a.a22 * b.ty + a.ty,
        }
    }
}

/// An integer rectangle `[x, x + width) x [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub const fn new(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    /// Smallest integer rectangle containing every point (floor/ceil).
    /// Returns `None` for an empty iterator.
    pub fn hull(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut it = points.into_iter().peekable();
        it.peek()?;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        // Snap values within float noise of an integer before rounding outwards.
        let snap = |v: f64| if (v - v.round()).abs() < 1e-6 { v.round() } else { v };
        let (x0, y0, x1, y1) = (snap(x0).floor(), snap(y0).floor(), snap(x1).ceil(), snap(y1).ceil());
        Some(Self {
            x: x0 as i64,
            y: y0 as i64,
            width: ((x1 - x0) as u32).max(1),
            height: ((y1 - y0) as u32).max(1),
        })
    }

    pub fn right(&self) -> i64 {
        self.x + self.width as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.height as i64
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x as f64 && p.x <= self.right() as f64 && p.y >= self.y as f64 && p.y <= self.bottom() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AffineTransform {
        AffineTransform { a11: 1.1, a12: -0.2, a21: 0.15, a22: 0.9, tx: 12.0, ty: -7.5 }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = sample();
        let b = AffineTransform::rotation(0.3) * AffineTransform::translation(3.0, 4.0);
        let p = Point::new(17.0, -4.0);
        let lhs = (a * b).apply(p);
        let rhs = a.apply(b.apply(p));
        assert!(lhs.distance(&rhs) < 1e-12);
    }

    #[test]
    fn inverse_round_trips() {
        let a = sample();
        let id = a * a.inverse().unwrap();
        assert!(id.max_abs_diff(&AffineTransform::IDENTITY) < 1e-12);
        let zero = AffineTransform { a11: 1.0, a12: 2.0, a21: 2.0, a22: 4.0, tx: 0.0, ty: 0.0 };
        assert!(zero.inverse().is_none());
    }

    #[test]
    fn hull_rounds_outward() {
        let r = Rect::hull([Point::new(-0.5, 1.2), Point::new(10.1, 3.0)]).unwrap();
        assert_eq!(r, Rect::new(-1, 1, 12, 2));
        let exact = Rect::hull(AffineTransform::translation(240.0, 0.0).frame_corners(300, 225)).unwrap();
        assert_eq!(exact, Rect::new(240, 0, 300, 225));
        assert!(Rect::hull(std::iter::empty()).is_none());
    }
}

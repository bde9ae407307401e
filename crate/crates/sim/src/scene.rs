//! Planar synthetic scenes with moving sprites and the virtual cameras that
//! look at them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use copano_core::texture::{procedural, DEFAULT_SCENE_SEED};
use copano_core::Image;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("viewport {x},{y} {width}x{height} leaves the {scene_w}x{scene_h} scene")]
    OutOfBounds { x: i64, y: i64, width: u32, height: u32, scene_w: u32, scene_h: u32 },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("manifest base needs exactly one of `path` and `generate`")]
    BaseSpec,
    #[error("sprite needs exactly one of `path` and `radius`")]
    SpriteSpec,
}

/// Straight-alpha RGBA pixels of a sprite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpriteImage {
    pub width: u32,
    pub height: u32,
    pub rgba: Vec<u8>,
}

impl SpriteImage {
    fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }
}

/// A moving RGBA overlay. Its top-left corner is at `(x0, y0) + (vx, vy) * t`
/// scene pixels, rounded to the nearest pixel.
#[derive(Clone, Debug)]
pub struct Sprite {
    pub image: Arc<SpriteImage>,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Sprite {
    /// Solid magenta disc of the given radius on a transparent square.
    pub fn disc(radius: u32) -> SpriteImage {
        let d = 2 * radius + 1;
        let r2 = (radius as f64 + 0.5).powi(2);
        let mut rgba = Vec::with_capacity((d * d * 4) as usize);
        for y in 0..d {
            for x in 0..d {
                let (dx, dy) = (x as f64 - radius as f64, y as f64 - radius as f64);
                rgba.extend_from_slice(if dx * dx + dy * dy <= r2 { &[255, 0, 255, 255] } else { &[0, 0, 0, 0] });
            }
        }
        SpriteImage { width: d, height: d, rgba }
    }

    pub fn moving_disc(radius: u32, x0: f64, y0: f64, vx: f64, vy: f64) -> Self {
        Self { image: Arc::new(Self::disc(radius)), x0, y0, vx, vy }
    }

    /// Integer top-left corner at time `t` seconds.
    pub fn position(&self, t: f64) -> (i64, i64) {
        ((self.x0 + self.vx * t).round() as i64, (self.y0 + self.vy * t).round() as i64)
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub base: Arc<Image>,
    pub sprites: Vec<Sprite>,
}

impl Scene {
    pub fn new(base: Image, sprites: Vec<Sprite>) -> Self {
        Self { base: Arc::new(base.to_rgb()), sprites }
    }

    /// The scene used when no manifest is given: a 3000x900 procedural base
    /// seeded with [`DEFAULT_SCENE_SEED`] and two slow sprites.
    pub fn bundled() -> Self {
        Self::new(
            procedural(3000, 900, DEFAULT_SCENE_SEED),
            vec![Sprite::moving_disc(9, 1100.0, 400.0, 30.0, 0.0), Sprite::moving_disc(7, 1700.0, 300.0, -20.0, 6.0)],
        )
    }

    pub fn width(&self) -> u32 {
        self.base.width()
    }

    pub fn height(&self) -> u32 {
        self.base.height()
    }

    /// Loads a TOML manifest. Relative paths are resolved against the
    /// manifest's directory.
    ///
    /// ```toml
    /// [base]
    /// generate = { seed = 7, width = 2000, height = 800 }   # or: path = "base.png"
    ///
    /// [[sprites]]
    /// radius = 9          # or: path = "ball.png" (RGBA)
    /// x0 = 900.0
    /// y0 = 400.0
    /// vx = 30.0
    /// vy = 0.0
    /// ```
    pub fn from_manifest(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.into(), source })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest_str(&text, dir)
    }

    pub fn from_manifest_str(text: &str, dir: &Path) -> Result<Self, SceneError> {
        let m: Manifest = toml::from_str(text)?;
        let base = match (m.base.path, m.base.generate) {
            (Some(p), None) => {
                let path = dir.join(p);
                let rgb = image::open(&path).map_err(|source| SceneError::Image { path, source })?.to_rgb8();
                let (w, h) = rgb.dimensions();
                Image::new(w, h, 3, rgb.into_raw()).expect("rgb buffer matches its dimensions")
            }
            (None, Some(g)) => procedural(g.width, g.height, g.seed),
            _ => return Err(SceneError::BaseSpec),
        };
        let mut sprites = Vec::new();
        for s in m.sprites {
            let image = match (s.path, s.radius) {
                (Some(p), None) => load_rgba(&dir.join(p))?,
                (None, Some(r)) => Sprite::disc(r),
                _ => return Err(SceneError::SpriteSpec),
            };
            sprites.push(Sprite { image: Arc::new(image), x0: s.x0, y0: s.y0, vx: s.vx, vy: s.vy });
        }
        Ok(Self::new(base, sprites))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    base: BaseSpec,
    #[serde(default)]
    sprites: Vec<SpriteSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseSpec {
    path: Option<PathBuf>,
    generate: Option<Generate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Generate {
    seed: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpriteSpec {
    path: Option<PathBuf>,
    radius: Option<u32>,
    x0: f64,
    y0: f64,
    #[serde(default)]
    vx: f64,
    #[serde(default)]
    vy: f64,
}

fn load_rgba(path: &Path) -> Result<SpriteImage, SceneError> {
    let img = image::open(path).map_err(|source| SceneError::Image { path: path.into(), source })?.to_rgba8();
    let (width, height) = img.dimensions();
    Ok(SpriteImage { width, height, rgba: img.into_raw() })
}

/// Rectangle of the scene a camera sees. The origin is fractional so slow
/// pans accumulate; rendering snaps it to whole pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewport {
    pub x: f64,
    pub y: f64,
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub fn new(x: f64, y: f64, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn origin(&self) -> (i64, i64) {
        (self.x.round() as i64, self.y.round() as i64)
    }

    /// Overlap area divided by this viewport's area, using snapped origins.
    pub fn overlap_fraction(&self, other: &Viewport) -> f64 {
        let (ax, ay) = self.origin();
        let (bx, by) = other.origin();
        let w = (ax + self.width as i64).min(bx + other.width as i64) - ax.max(bx);
        let h = (ay + self.height as i64).min(by + other.height as i64) - ay.max(by);
        if w <= 0 || h <= 0 {
            return 0.0;
        }
        (w * h) as f64 / (self.width as f64 * self.height as f64)
    }
}

/// A virtual phone camera: a viewport over the scene rendered at a fixed
/// output resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualCamera {
    pub viewport: Viewport,
    pub resolution: (u32, u32),
    /// Fastest pan, in scene pixels per second.
    pub pan_speed: f64,
}

impl VirtualCamera {
    /// Camera whose output resolution equals its viewport size.
    pub fn native(viewport: Viewport, pan_speed: f64) -> Self {
        Self { viewport, resolution: (viewport.width, viewport.height), pan_speed }
    }

    /// Moves the viewport, stopping at the scene edges.
    pub fn pan_within(&mut self, dx: f64, dy: f64, scene: &Scene) {
        let max_x = (scene.width() - self.viewport.width) as f64;
        let max_y = (scene.height() - self.viewport.height) as f64;
        self.viewport.x = (self.viewport.x + dx).clamp(0.0, max_x);
        self.viewport.y = (self.viewport.y + dy).clamp(0.0, max_y);
    }
}

/// What `camera` sees at time `t` seconds: the base crop with every sprite
/// alpha-composited at its position, resampled to the camera resolution.
pub fn render_viewport(scene: &Scene, camera: &VirtualCamera, t: f64) -> Result<Image, SceneError> {
    let v = camera.viewport;
    let (x, y) = v.origin();
    if x < 0 || y < 0 || x + v.width as i64 > scene.width() as i64 || y + v.height as i64 > scene.height() as i64 {
        return Err(SceneError::OutOfBounds {
            x,
            y,
            width: v.width,
            height: v.height,
            scene_w: scene.width(),
            scene_h: scene.height(),
        });
    }
    let mut out = scene.base.crop(x as u32, y as u32, v.width, v.height);
    for sprite in &scene.sprites {
        let (sx, sy) = sprite.position(t);
        overlay(&mut out, &sprite.image, sx - x, sy - y);
    }
    let (rw, rh) = camera.resolution;
    if (rw, rh) != out.dimensions() {
        out = out.resize_area(rw, rh);
    }
    Ok(out)
}

/// Alpha-composites `sprite` with its top-left at `(ox, oy)` in `dst`.
fn overlay(dst: &mut Image, sprite: &SpriteImage, ox: i64, oy: i64) {
    let (dw, dh) = dst.dimensions();
    for sy in 0..sprite.height {
        let y = oy + sy as i64;
        if y < 0 || y >= dh as i64 {
            continue;
        }
        for sx in 0..sprite.width {
            let x = ox + sx as i64;
            if x < 0 || x >= dw as i64 {
                continue;
            }
            let [r, g, b, a] = sprite.pixel(sx, sy);
            let (rgb, a) = ([r, g, b], a as u32);
            if a == 0 {
                continue;
            }
            let px = dst.pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px[c] = ((rgb[c] as u32 * a + px[c] as u32 * (255 - a) + 127) / 255) as u8;
            }
        }
    }
}

/// Whether a pixel reads as sprite magenta, including ghosts blended at
/// partial opacity. Generated textures never pass this test.
pub fn is_magenta(px: &[u8]) -> bool {
    px.len() >= 3 && (px[0].min(px[2]) as i32 - px[1] as i32) > 40
}

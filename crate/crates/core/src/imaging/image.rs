use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(u8),
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    DataLength { expected: usize, actual: usize },
}

/// An 8-bit raster, grayscale or RGB, stored row-major and interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::DataLength { expected, actual: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    /// A uniformly filled image. `value` supplies one byte per channel.
    ///
    /// # Panics
    ///
    /// Panics on zero dimensions or when `value` is not 1 or 3 bytes long.
    pub fn filled(width: u32, height: u32, value: &[u8]) -> Self {
        let channels = value.len() as u8;
        let data = value.repeat(width as usize * height as usize);
        Self::new(width, height, channels, data).expect("valid fill")
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn<const C: usize>(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; C]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, C as u8, data).expect("valid generator")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// The channel values of pixel `(x, y)`.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Luma of every pixel as `f32` in `[0, 255]`, using 0.299/0.587/0.114.
    pub fn luma(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
                .collect(),
        }
    }

    /// Single-channel copy; rounds the luma to the nearest byte.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.luma().into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Three-channel copy; gray values are replicated.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { width: self.width, height: self.height, channels: 3, data }
    }

    /// Crops the rectangle `[x, x + w) x [y, y + h)`, which must lie inside.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Image {
        assert!(x + w <= self.width && y + h <= self.height && w > 0 && h > 0, "crop out of range");
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * c;
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        Image { width: w, height: h, channels: self.channels, data }
    }

    /// Resamples to exactly `width x height` by area averaging. Intended for
    /// shrinking; enlarging degenerates to nearest-neighbour box sampling.
    pub fn resize_area(&self, width: u32, height: u32) -> Image {
        assert!(width > 0 && height > 0);
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let c = self.channels as usize;
        let (sw, sh) = (self.width as usize, self.height as usize);
        let xs = area_taps(sw, width as usize);
        let ys = area_taps(sh, height as usize);

        let mut horiz = vec![0f32; sh * width as usize * c];
        for y in 0..sh {
            let src = &self.data[y * sw * c..(y + 1) * sw * c];
            let dst = &mut horiz[y * width as usize * c..(y + 1) * width as usize * c];
            for (ox, taps) in xs.iter().enumerate() {
                for &(sx, w) in taps {
                    for ch in 0..c {
                        dst[ox * c + ch] += w * src[sx * c + ch] as f32;
                    }
                }
            }
        }

        let ow = width as usize;
        let mut out = vec![0f32; height as usize * ow * c];
        for (oy, taps) in ys.iter().enumerate() {
            let dst = &mut out[oy * ow * c..(oy + 1) * ow * c];
            for &(sy, w) in taps {
                let src = &horiz[sy * ow * c..(sy + 1) * ow * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let data = out.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Image { width, height, channels: self.channels, data }
    }
}

/// For each output index, the source indices it covers and their normalized
/// coverage weights.
fn area_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = ((o + 1) as f64 * scale).min(src as f64);
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let cover = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if cover > 1e-12 {
                    taps.push((s, (cover / (hi - lo)) as f32));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

/// Scales the image so its longest side equals `max_dim`, preserving aspect
/// ratio. Images already within the bound are returned unchanged.
pub fn downscale_to_max_dim(img: &Image, max_dim: u32) -> Image {
    assert!(max_dim >= 1, "max_dim must be positive");
    let (w, h) = img.dimensions();
    if w.max(h) <= max_dim {
        return img.clone();
    }
    let (nw, nh) = if w >= h {
        (max_dim, ((h as f64 * max_dim as f64 / w as f64).round() as u32).max(1))
    } else {
        (((w as f64 * max_dim as f64 / h as f64).round() as u32).max(1), max_dim)
    };
    img.resize_area(nw, nh)
}

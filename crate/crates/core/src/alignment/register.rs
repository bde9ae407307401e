use serde::{Deserialize, Serialize};

use super::{estimate_affine_ransac, AffineTransform, Point, RansacParams};
use crate::imaging::{detect_features, match_features, Feature, Image, DEFAULT_MAX_FEATURES, DEFAULT_RATIO};
use crate::DeviceId;

/// Knobs for feature extraction and pairwise registration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationParams {
    pub max_features: usize,
    pub ratio: f32,
    /// Seed of the binary descriptor pattern; must be shared by all frames.
    pub descriptor_seed: u64,
    pub ransac: RansacParams,
    /// Area change (|det| of the linear part) allowed between viewfinders
    /// before an edge is discarded as implausible.
    pub max_area_ratio: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            max_features: DEFAULT_MAX_FEATURES,
            ratio: DEFAULT_RATIO,
            descriptor_seed: 0,
            ransac: RansacParams::default(),
            max_area_ratio: 4.0,
        }
    }
}

/// A frame's features, cached so unchanged frames are not re-described.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub device: DeviceId,
    pub width: u32,
    pub height: u32,
    pub features: Vec<Feature>,
}

impl FrameFeatures {
    pub fn extract(device: DeviceId, img: &Image, params: &RegistrationParams) -> Self {
        Self {
            device,
            width: img.width(),
            height: img.height(),
            features: detect_features(img, params.max_features, params.descriptor_seed),
        }
    }

    pub fn points(&self) -> Vec<Point> {
        self.features.iter().map(|f| Point::new(f.x as f64, f.y as f64)).collect()
    }
}

/// A registered pair: `transform` maps `device_a` pixel coordinates into
/// `device_b` pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationEdge {
    pub device_a: DeviceId,
    pub device_b: DeviceId,
    pub transform: AffineTransform,
    pub inlier_count: usize,
    pub rms_error: f64,
}

/// Matches and robustly aligns two frames. `None` means the frames do not
/// share enough content to register.
pub fn pairwise_register(a: &FrameFeatures, b: &FrameFeatures, params: &RegistrationParams) -> Option<RegistrationEdge> {
    let matches = match_features(&a.features, &b.features, params.ratio);
    let fit = estimate_affine_ransac(&matches, &a.points(), &b.points(), &params.ransac).ok()?;
    let det = fit.transform.det().abs();
    if !(1.0 / params.max_area_ratio..=params.max_area_ratio).contains(&det) {
        return None;
    }
    Some(RegistrationEdge {
        device_a: a.device.clone(),
        device_b: b.device.clone(),
        transform: fit.transform,
        inlier_count: fit.inlier_count,
        rms_error: fit.rms_error,
    })
}

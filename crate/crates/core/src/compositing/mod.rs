//! Preview and final panorama rendering.
//!
//! The preview path paints warped frames in join order with no colour
//! correction. The final path estimates one gain per device and blends the
//! gain-corrected frames with edge-distance feathering.

mod feather;
mod gain;
mod preview;
mod warp;

use thiserror::Error;

use crate::DeviceId;

pub use feather::{feather_blend_final, feather_weight};
pub use gain::{estimate_gains, GAIN_REGULARIZATION};
pub use preview::{composite_preview, CompositeResult, PREVIEW_PANORAMA_MAX_DIM};
pub use warp::{warp_frame, Mask};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompositeError {
    #[error("transform for {0} is singular")]
    SingularTransform(String),
    #[error("no image supplied for placed device {0}")]
    MissingImage(DeviceId),
    #[error("image for {device} is {actual:?}, layout expects {expected:?}")]
    SizeMismatch { device: DeviceId, expected: (u32, u32), actual: (u32, u32) },
}

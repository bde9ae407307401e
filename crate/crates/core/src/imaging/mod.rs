//! Raster primitives feeding pairwise registration.
//!
//! Frames are downscaled to preview resolution, corners are found with a
//! Harris detector and described with a steered 256-bit binary test pattern,
//! and descriptors are matched by Hamming distance with a ratio test.

mod codec;
mod features;
mod image;
mod matching;

pub use codec::{decode, encode_jpeg, encode_png, CodecError};
pub use features::{detect_features, Descriptor, Feature, DEFAULT_MAX_FEATURES, DESCRIPTOR_BITS};
pub use image::{downscale_to_max_dim, Image, ImageError};
pub use matching::{match_features, MatchPair, DEFAULT_RATIO};

/// Longest side of a viewfinder frame sent for the live preview.
pub const PREVIEW_MAX_DIM: u32 = 300;

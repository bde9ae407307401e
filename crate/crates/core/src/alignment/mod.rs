//! Pairwise affine registration and the global panorama layout.

mod affine;
mod estimate;
mod layout;
mod register;

pub use affine::{AffineTransform, Point, Rect};
pub use estimate::{estimate_affine_lsq, estimate_affine_ransac, EstimateError, RansacFit, RansacParams};
pub use layout::{choose_anchor, solve_layout, PanoramaLayout};
pub use register::{pairwise_register, FrameFeatures, RegistrationEdge, RegistrationParams};

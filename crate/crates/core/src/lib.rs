//! Core building blocks for collaborative live panoramas.
//!
//! The crate is split along the pipeline a coordination server runs:
//!
//! * [`imaging`] turns viewfinder frames into corner features with binary
//!   descriptors and matches them between frames.
//! * [`alignment`] estimates pairwise affine transforms with RANSAC and
//!   chains them into a panorama layout anchored at one device.
//! * [`compositing`] paints the fast preview and renders the final panorama
//!   with gain compensation and feathered blending.
//! * [`pipeline`] strings these together, incrementally for the preview.
//! * [`session`] is the transport-independent state machine for device
//!   registration, group merging, host role, instructions and the
//!   synchronized capture handshake.
//!
//! [`texture`] generates the feature-rich procedural scenes used by the
//! simulator and the tests.

pub mod alignment;
pub mod compositing;
pub mod ids;
pub mod imaging;
pub mod pipeline;
pub mod session;
pub mod texture;

pub use alignment::{AffineTransform, PanoramaLayout, Point, Rect, RegistrationEdge};
pub use ids::DeviceId;
pub use imaging::{Feature, Image, MatchPair};

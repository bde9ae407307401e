//! The guide under `book/`, one module per chapter, so that `cargo test`
//! compiles and runs every listing in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}
#[doc = include_str!("../../../book/src/registration.md")]
pub mod registration {}
#[doc = include_str!("../../../book/src/layout.md")]
pub mod layout {}
#[doc = include_str!("../../../book/src/compositing.md")]
pub mod compositing {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../../book/src/server.md")]
pub mod server {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/stitch.md")]
pub mod stitch {}

//! Coordination server for collaborative live panoramas.
//!
//! Clients hold one TCP connection each and exchange length-prefixed JSON
//! messages (see [`wire`]). The server hosts the session state machine from
//! `copano-core`, stitches a live preview from everyone's viewfinder frames,
//! fans out the capture order, and renders the final panorama from the
//! uploaded captures. The same port answers plain HTTP GETs for finished
//! panoramas (`/sessions/<id>/panorama.png`) and for a static web client
//! under `/app`.

pub mod client;
pub mod clock;
mod http;
pub mod persist;
mod preview;
mod server;
mod stats;
pub mod wire;

pub use clock::{Clock, MonotonicClock, SystemClock};
pub use server::{start, ServerConfig, ServerHandle, FINAL_REGISTER_MAX_DIM};
pub use stats::StatsSnapshot;

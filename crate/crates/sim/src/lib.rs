//! Simulated phones for copano.
//!
//! A [`scene::Scene`] is a large planar image with moving sprites; each
//! simulated client owns a [`scene::VirtualCamera`] looking at part of it.
//! Clients talk to the real server over loopback through a [`link::SimLink`]
//! that injects one-way delays from a [`latency::LatencyModel`].
//!
//! Harnesses:
//!
//! - [`session::run_scripted_session`] drives a whole session with the
//!   `spread` or `follow` script and returns the panorama, the trajectories
//!   and the recovered layout.
//! - [`skew::measure_capture_skew`] repeats capture orders and reports the
//!   spread of capture instants.
//! - [`ghosting::ghosting_metric`] compares sequential and synchronized
//!   capture of a moving sprite.
//! - [`load::run_load`] measures preview throughput and memory under load.
//! - [`protocol::check_random_sequences`] checks the session protocol's
//!   invariants on random operation sequences.

pub mod ghosting;
pub mod latency;
pub mod link;
pub mod load;
pub mod protocol;
pub mod scene;
pub mod session;
pub mod skew;

use std::path::PathBuf;

use copano_server::{MonotonicClock, ServerConfig, ServerHandle};

/// Starts an in-process server on an ephemeral loopback port sharing
/// `clock` with the simulated clients.
pub async fn local_server(clock: MonotonicClock, data_dir: PathBuf) -> std::io::Result<ServerHandle> {
    let config = ServerConfig {
        addr: ([127, 0, 0, 1], 0).into(),
        data_dir,
        ..ServerConfig::default()
    };
    copano_server::start(config, std::sync::Arc::new(clock)).await
}

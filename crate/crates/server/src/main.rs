use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use copano_server::{start, ServerConfig, SystemClock};
use tracing_subscriber::EnvFilter;

/// Coordination server for collaborative live panoramas.
#[derive(Parser, Debug)]
#[command(name = "server", version)]
struct Args {
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::UNSPECIFIED))]
    bind: IpAddr,
    /// Upper bound on preview broadcasts per second and session.
    #[arg(long, default_value_t = 20)]
    preview_max_fps: u32,
    /// Viewfinder frames are downsized to this longest side before stitching.
    #[arg(long, default_value_t = 300)]
    frame_max_dim: u32,
    /// Captures are registered at most this large for the final panorama.
    #[arg(long, default_value_t = copano_server::FINAL_REGISTER_MAX_DIM)]
    final_register_max_dim: u32,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Directory with the web client, served under /app.
    #[arg(long)]
    app_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace; RUST_LOG overrides it.
    #[arg(long, default_value = "info")]
    log_level: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let filter = EnvFilter::try_from_default_env().or_else(|_| EnvFilter::try_new(&args.log_level))?;
    tracing_subscriber::fmt().with_env_filter(filter).init();

    let config = ServerConfig {
        addr: SocketAddr::new(args.bind, args.port),
        preview_max_fps: args.preview_max_fps,
        frame_max_dim: args.frame_max_dim,
        final_register_max_dim: args.final_register_max_dim,
        data_dir: args.data_dir,
        app_dir: args.app_dir,
        ..ServerConfig::default()
    };
    let handle = start(config, Arc::new(SystemClock)).await.context("starting server")?;
    tokio::select! {
        _ = handle_wait(handle) => {}
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}

async fn handle_wait(handle: copano_server::ServerHandle) {
    handle.wait().await
}

//! Preview throughput and overload harness.
//!
//! Clients hold still in a row with the target overlap and stream
//! viewfinder frames at a fixed rate while the host counts the preview
//! updates it receives. Every client drains its inbound queue so the
//! harness itself does not accumulate memory.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use copano_core::imaging::{downscale_to_max_dim, encode_jpeg};
use copano_server::wire::*;
use copano_server::MonotonicClock;
use tokio::sync::watch;
use tokio::time::{Instant, MissedTickBehavior};

use crate::latency::LatencyModel;
use crate::link::SimLink;
use crate::scene::{render_viewport, Scene, Viewport, VirtualCamera};
use crate::session::{form_session, row_position};

#[derive(Clone, Debug)]
pub struct LoadConfig {
    pub clients: usize,
    /// Frames per second per client.
    pub fps: f64,
    /// Length of the measurement window, starting at the first preview.
    pub duration: Duration,
    pub capture_size: (u32, u32),
    pub preview_max_dim: u32,
    pub target_overlap: f64,
    /// Cycle through this many frames rendered up front instead of
    /// rendering each one; used when the frame rate is the point.
    pub prerendered: Option<usize>,
    /// Sample resident memory this often; `None` disables sampling.
    pub rss_every: Option<Duration>,
    pub seed: u64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            fps: 3.0,
            duration: Duration::from_secs(30),
            capture_size: (480, 360),
            preview_max_dim: 300,
            target_overlap: 0.2,
            prerendered: None,
            rss_every: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadRun {
    /// Receipt instants (ms) of previews the host got inside the window.
    pub preview_receipts_ms: Vec<f64>,
    pub window_start_ms: f64,
    pub window_ms: f64,
    pub frames_sent: u64,
    /// `(ms, resident bytes)` samples over the window.
    pub rss_samples: Vec<(f64, u64)>,
}

impl LoadRun {
    pub fn updates(&self) -> usize {
        self.preview_receipts_ms.len()
    }

    pub fn rate(&self) -> f64 {
        self.updates() as f64 / (self.window_ms / 1000.0)
    }

    /// Fewest updates in any whole one-second bucket of the window.
    pub fn min_per_second(&self) -> usize {
        let buckets = (self.window_ms / 1000.0).floor() as usize;
        let mut counts = vec![0usize; buckets.max(1)];
        for t in &self.preview_receipts_ms {
            let b = ((t - self.window_start_ms) / 1000.0) as usize;
            if b < buckets {
                counts[b] += 1;
            }
        }
        counts.into_iter().min().unwrap_or(0)
    }

    /// Largest resident size in the first and second half of the window.
    pub fn rss_halves(&self) -> Option<(u64, u64)> {
        if self.rss_samples.len() < 4 {
            return None;
        }
        let mid = self.window_start_ms + self.window_ms / 2.0;
        let first = self.rss_samples.iter().filter(|s| s.0 < mid).map(|s| s.1).max()?;
        let second = self.rss_samples.iter().filter(|s| s.0 >= mid).map(|s| s.1).max()?;
        Some((first, second))
    }
}

/// Resident set size of this process, from `/proc/self/statm`.
pub fn resident_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

pub async fn run_load(addr: SocketAddr, clock: MonotonicClock, scene: Arc<Scene>, cfg: LoadConfig) -> anyhow::Result<LoadRun> {
    let (links, _, _, _) = form_session(addr, clock, cfg.clients, LatencyModel::none(), cfg.seed).await?;
    let (w, h) = cfg.capture_size;
    let cx = (scene.width() - w) as f64 / 2.0;
    let cy = (scene.height() - h) as f64 / 2.0;
    let step = (1.0 - cfg.target_overlap) * w as f64;
    let mut xs = vec![cx; cfg.clients];
    for i in 1..cfg.clients {
        let (parent, side) = row_position(i).expect("non-host clients have a parent");
        xs[i] = xs[parent] + side * step;
    }

    let (stop_tx, stop_rx) = watch::channel(false);
    let (window_tx, window_rx) = watch::channel(None::<f64>);
    let mut tasks = Vec::new();
    for (i, link) in links.into_iter().enumerate() {
        let camera = VirtualCamera::native(Viewport::new(xs[i], cy, w, h), 0.0);
        let frames = match cfg.prerendered {
            Some(n) => Some(prerender(&scene, &camera, n, cfg.preview_max_dim)?),
            None => None,
        };
        let streamer = Streamer {
            link,
            scene: scene.clone(),
            camera,
            frames,
            fps: cfg.fps,
            max_dim: cfg.preview_max_dim,
            stop: stop_rx.clone(),
            host: (i == 0).then(|| window_tx.clone()),
            window: cfg.duration.as_secs_f64() * 1000.0,
        };
        tasks.push(tokio::spawn(streamer.run()));
    }

    let mut rss_samples = Vec::new();
    if let Some(every) = cfg.rss_every {
        let mut window = window_rx.clone();
        let start = *window.wait_for(|w| w.is_some()).await?.as_ref().expect("window started");
        let mut ticker = tokio::time::interval(every);
        while !*stop_rx.borrow() && clock.now_ms_f64() < start + cfg.duration.as_secs_f64() * 1000.0 {
            ticker.tick().await;
            if let Some(rss) = resident_bytes() {
                rss_samples.push((clock.now_ms_f64(), rss));
            }
        }
    }

    let mut run = LoadRun { window_ms: cfg.duration.as_secs_f64() * 1000.0, rss_samples, ..Default::default() };
    for (i, t) in tasks.into_iter().enumerate() {
        let (sent, receipts, start) = t.await.context("load client panicked")??;
        run.frames_sent += sent;
        if i == 0 {
            run.preview_receipts_ms = receipts;
            run.window_start_ms = start;
            let _ = stop_tx.send(true);
        }
    }
    Ok(run)
}

fn prerender(scene: &Scene, camera: &VirtualCamera, n: usize, max_dim: u32) -> anyhow::Result<Vec<FramePayload>> {
    (0..n.max(1))
        .map(|k| {
            let img = downscale_to_max_dim(&render_viewport(scene, camera, k as f64 * 0.5)?, max_dim);
            let jpeg = encode_jpeg(&img, FRAME_JPEG_QUALITY)?;
            Ok(FramePayload { width: img.width(), height: img.height(), jpeg: encode_b64(&jpeg) })
        })
        .collect()
}

struct Streamer {
    link: SimLink,
    scene: Arc<Scene>,
    camera: VirtualCamera,
    frames: Option<Vec<FramePayload>>,
    fps: f64,
    max_dim: u32,
    stop: watch::Receiver<bool>,
    /// Set for the counting client; publishes the window start.
    host: Option<watch::Sender<Option<f64>>>,
    window: f64,
}

impl Streamer {
    /// Streams until stopped (or, for the host, until the window closes).
    /// Returns frames sent, preview receipts in the window and its start.
    async fn run(mut self) -> anyhow::Result<(u64, Vec<f64>, f64)> {
        let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / self.fps));
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut seq = 0u64;
        let mut receipts = Vec::new();
        let mut start: Option<f64> = None;
        let give_up = Instant::now() + Duration::from_secs(30) + Duration::from_secs_f64(self.window / 1000.0);
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    seq += 1;
                    let payload = match &self.frames {
                        Some(frames) => frames[(seq as usize) % frames.len()].clone(),
                        None => {
                            let t = self.link.now_ms() as f64 / 1000.0;
                            let img = downscale_to_max_dim(&render_viewport(&self.scene, &self.camera, t)?, self.max_dim);
                            FramePayload { width: img.width(), height: img.height(), jpeg: encode_b64(&encode_jpeg(&img, FRAME_JPEG_QUALITY)?) }
                        }
                    };
                    self.link.send(Envelope::new(Kind::Frame, self.link.now_ms(), &payload).with_seq(seq));
                }
                msg = self.link.recv() => {
                    let Some(msg) = msg else { anyhow::bail!("connection closed during load") };
                    let d = msg?;
                    if let (Some(host), Some(Kind::Preview)) = (&self.host, d.env.kind()) {
                        let s = *start.get_or_insert_with(|| {
                            let _ = host.send(Some(d.receipt_ms));
                            d.receipt_ms
                        });
                        if d.receipt_ms < s + self.window {
                            receipts.push(d.receipt_ms);
                        } else {
                            return Ok((seq, receipts, s));
                        }
                    }
                }
                _ = self.stop.changed() => return Ok((seq, receipts, start.unwrap_or(0.0))),
                _ = tokio::time::sleep_until(give_up) => anyhow::bail!("load window never completed"),
            }
        }
    }
}

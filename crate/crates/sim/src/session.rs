//! Scripted sessions: simulated phones driven through the real server.
//!
//! Every client registers, joins the first client's group and streams
//! viewfinder frames of its virtual camera. The first client is the host.
//! Clients are arranged in a row around the host: client `i` sits to the
//! right of its parent when `i` is odd and to the left when even, where the
//! parent is the host for `i <= 2` and client `i - 2` otherwise.
//!
//! * `spread`: each non-host client reads its own and its parent's quad from
//!   the preview and pans outward until their overlap reaches the target.
//! * `follow`: clients only move when an arrow arrives; the host reads the
//!   preview and sends arrows until every overlap is within tolerance.
//!
//! In both scripts the host orders the capture once the preview has shown
//! every overlap within tolerance for a while.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use copano_core::ids::{DeviceId, GroupId, SessionId};
use copano_core::imaging::{decode, downscale_to_max_dim, encode_jpeg, encode_png};
use copano_core::{AffineTransform, Image, Point};
use copano_server::client::http_get;
use copano_server::persist::{SessionMeta, META_FILE};
use copano_server::wire::*;
use copano_server::MonotonicClock;
use tokio::time::{Instant, MissedTickBehavior};
use tracing::{debug, warn};

use crate::latency::LatencyModel;
use crate::link::{Delivered, SimLink};
use crate::scene::{render_viewport, Scene, Viewport, VirtualCamera};

/// Fraction of the remaining overlap error a spreading client corrects per
/// frame.
const SPREAD_GAIN: f64 = 0.6;
/// Spreading clients stop once their overlap error is below this.
const SPREAD_DEADBAND: f64 = 0.01;
/// Overlap tolerance the host requires before capturing, per script.
const SPREAD_TOLERANCE: f64 = 0.03;
const FOLLOW_TOLERANCE: f64 = 0.05;
/// Distance a client moves per received arrow, as a fraction of its
/// viewport width.
const NUDGE_FRACTION: f64 = 0.08;
/// The host waits this long after an arrow before judging its effect.
const FOLLOW_REINSTRUCT_MS: u64 = 1200;
/// How long the preview must look ready before the host captures.
const SETTLE_MS: u64 = 1500;
/// A client that stays unplaced this long backs towards its parent.
const UNPLACED_BACKOFF_MS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Script {
    Spread,
    Follow,
}

impl FromStr for Script {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spread" => Ok(Script::Spread),
            "follow" => Ok(Script::Follow),
            _ => Err(format!("unknown script {s:?}; expected spread or follow")),
        }
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Script::Spread => "spread",
            Script::Follow => "follow",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub clients: usize,
    pub script: Script,
    pub latency: LatencyModel,
    pub seed: u64,
    /// Viewfinder frames per second per client.
    pub frame_fps: f64,
    /// Viewport and capture size in scene pixels.
    pub capture_size: (u32, u32),
    /// Longest side of streamed viewfinder frames.
    pub preview_max_dim: u32,
    pub pan_speed: f64,
    pub target_overlap: f64,
    pub timeout: Duration,
    /// Common starting top-left corner; the scene centre when `None`.
    pub start: Option<(f64, f64)>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            clients: 3,
            script: Script::Spread,
            latency: LatencyModel::none(),
            seed: 0,
            frame_fps: 3.0,
            capture_size: (480, 360),
            preview_max_dim: 300,
            pan_speed: 240.0,
            target_overlap: 0.2,
            timeout: Duration::from_secs(120),
            start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t_ms: u64,
    /// Newest preview tick the client had seen.
    pub tick: u64,
    pub device: DeviceId,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstructionRecord {
    pub t_ms: u64,
    pub target: DeviceId,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Default)]
struct Log {
    trajectories: Vec<TrajectorySample>,
    instructions: Vec<InstructionRecord>,
    preview_ticks: Vec<(u64, u64)>,
}

#[derive(Clone, Debug)]
pub struct SessionArtifacts {
    pub session_id: SessionId,
    /// Devices in join order; the first is the host.
    pub devices: Vec<DeviceId>,
    pub panorama: Image,
    pub meta: SessionMeta,
    pub result: ResultReady,
    /// Each client's viewport when it captured.
    pub final_viewports: BTreeMap<DeviceId, Viewport>,
    pub capture_instants_ms: BTreeMap<DeviceId, f64>,
    pub trajectories: Vec<TrajectorySample>,
    pub instructions: Vec<InstructionRecord>,
    /// `(tick, receipt ms)` of every preview the host received.
    pub preview_ticks: Vec<(u64, u64)>,
    pub elapsed: Duration,
}

impl SessionArtifacts {
    pub fn host(&self) -> &DeviceId {
        &self.devices[0]
    }
}

/// Parent and side (+1 right, -1 left) of client `i` in the row.
pub fn row_position(i: usize) -> Option<(usize, f64)> {
    match i {
        0 => None,
        1 | 2 => Some((0, if i == 1 { 1.0 } else { -1.0 })),
        _ => Some((i - 2, if i % 2 == 1 { 1.0 } else { -1.0 })),
    }
}

fn x_extent(corners: &[[f64; 2]; 4]) -> (f64, f64) {
    let xs = corners.iter().map(|c| c[0]);
    (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max))
}

/// Signed overlap of `me` with `parent` along the row, as a fraction of
/// `me`'s width. `shift` moves `me` first (in the quads' units). Values
/// above 1 mean `me` sits on the wrong side of its parent.
fn row_overlap(me: &[[f64; 2]; 4], parent: &[[f64; 2]; 4], side: f64, shift: f64) -> f64 {
    let (ml, mr) = x_extent(me);
    let (pl, pr) = x_extent(parent);
    let w = mr - ml;
    if side > 0.0 {
        (pr - (ml + shift)) / w
    } else {
        ((mr + shift) - pl) / w
    }
}

/// Registers `n` clients, forms one group and starts a session.
pub async fn form_session(
    addr: SocketAddr,
    clock: MonotonicClock,
    n: usize,
    latency: LatencyModel,
    seed: u64,
) -> anyhow::Result<(Vec<SimLink>, Vec<DeviceId>, GroupId, SessionStarted)> {
    let wait = Duration::from_secs(10);
    let mut links = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut group = None;
    for i in 0..n {
        let mut link = SimLink::connect(addr, clock, latency, seed.wrapping_mul(1000).wrapping_add(i as u64)).await?;
        link.send(Envelope::new(Kind::Register, link.now_ms(), &Empty {}));
        let r: Registered = link.expect(Kind::Register, wait).await?.env.payload()?;
        if let Some(g) = &group {
            link.send(Envelope::new(Kind::Join, link.now_ms(), &JoinRequest { group_id: GroupId::clone(g) }));
            link.expect(Kind::Join, wait).await?;
        } else {
            group = Some(r.group_id.clone());
        }
        ids.push(r.device_id);
        links.push(link);
    }
    let group = group.context("no clients")?;
    links[0].send(Envelope::new(Kind::Start, links[0].now_ms(), &Empty {}));
    let mut started = None;
    for link in &mut links {
        started = Some(link.expect(Kind::Start, wait).await?.env.payload::<SessionStarted>()?);
    }
    Ok((links, ids, group, started.expect("at least one client")))
}

/// Runs one scripted session end to end and collects its artifacts.
pub async fn run_scripted_session(
    addr: SocketAddr,
    clock: MonotonicClock,
    scene: Arc<Scene>,
    cfg: SessionConfig,
) -> anyhow::Result<SessionArtifacts> {
    if cfg.clients == 0 {
        bail!("a session needs at least one client");
    }
    let began = Instant::now();
    let timeout = cfg.timeout;
    tokio::time::timeout(timeout, run_inner(addr, clock, scene, cfg, began))
        .await
        .map_err(|_| anyhow::anyhow!("scripted session did not finish within {timeout:?}"))?
}

async fn run_inner(
    addr: SocketAddr,
    clock: MonotonicClock,
    scene: Arc<Scene>,
    cfg: SessionConfig,
    began: Instant,
) -> anyhow::Result<SessionArtifacts> {
    let (links, ids, _group, started) = form_session(addr, clock, cfg.clients, cfg.latency, cfg.seed).await?;
    let ids = Arc::new(ids);
    let cfg = Arc::new(cfg);
    let log = Arc::new(Mutex::new(Log::default()));
    let (w, h) = cfg.capture_size;
    let start = cfg.start.unwrap_or(((scene.width() - w) as f64 / 2.0, (scene.height() - h) as f64 / 2.0));

    let mut tasks = Vec::new();
    for (index, link) in links.into_iter().enumerate() {
        let actor = Actor {
            index,
            ids: ids.clone(),
            link,
            scene: scene.clone(),
            camera: VirtualCamera::native(Viewport::new(start.0, start.1, w, h), cfg.pan_speed),
            cfg: cfg.clone(),
            log: log.clone(),
            seq: 0,
            sent_positions: BTreeMap::new(),
            quads: Vec::new(),
            unplaced: Vec::new(),
            tick: 0,
            nudge: (0.0, 0.0),
            unplaced_since: None,
            settled_since: None,
            last_instruction: BTreeMap::new(),
            capture_requested: false,
            streaming: true,
        };
        tasks.push(tokio::spawn(actor.run()));
    }
    let mut outcomes = Vec::new();
    for t in tasks {
        outcomes.push(t.await.context("client task panicked")??);
    }

    let result = outcomes[0].result.clone();
    let (status, png) = http_get(addr, &result.url).await?;
    if status != 200 {
        bail!("panorama download returned HTTP {status}");
    }
    let panorama = decode(&png)?;
    let (status, meta) = http_get(addr, &format!("/sessions/{}/{META_FILE}", started.session_id)).await?;
    if status != 200 {
        bail!("session.meta download returned HTTP {status}");
    }
    let meta = SessionMeta::from_toml(std::str::from_utf8(&meta)?)?;

    let log = std::mem::take(&mut *log.lock().expect("log lock"));
    Ok(SessionArtifacts {
        session_id: started.session_id,
        devices: ids.to_vec(),
        panorama,
        meta,
        result,
        final_viewports: ids.iter().cloned().zip(outcomes.iter().map(|o| o.viewport)).collect(),
        capture_instants_ms: ids.iter().cloned().zip(outcomes.iter().map(|o| o.capture_ms)).collect(),
        trajectories: log.trajectories,
        instructions: log.instructions,
        preview_ticks: log.preview_ticks,
        elapsed: began.elapsed(),
    })
}

struct Outcome {
    viewport: Viewport,
    capture_ms: f64,
    result: ResultReady,
}

struct Actor {
    index: usize,
    ids: Arc<Vec<DeviceId>>,
    link: SimLink,
    scene: Arc<Scene>,
    camera: VirtualCamera,
    cfg: Arc<SessionConfig>,
    log: Arc<Mutex<Log>>,
    seq: u64,
    /// Viewport origin at each recently sent frame.
    sent_positions: BTreeMap<u64, (f64, f64)>,
    quads: Vec<QuadInfo>,
    unplaced: Vec<DeviceId>,
    tick: u64,
    /// Motion still owed to received arrows, in scene pixels.
    nudge: (f64, f64),
    unplaced_since: Option<u64>,
    settled_since: Option<u64>,
    last_instruction: BTreeMap<DeviceId, u64>,
    capture_requested: bool,
    streaming: bool,
}

impl Actor {
    fn id(&self) -> &DeviceId {
        &self.ids[self.index]
    }

    fn is_host(&self) -> bool {
        self.index == 0
    }

    fn max_step(&self) -> f64 {
        self.cfg.pan_speed / self.cfg.frame_fps
    }

    async fn run(mut self) -> anyhow::Result<Outcome> {
        let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / self.cfg.frame_fps));
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut captured: Option<(Viewport, f64)> = None;
        loop {
            tokio::select! {
                _ = ticker.tick(), if self.streaming => self.on_tick()?,
                msg = self.link.recv() => {
                    let Some(msg) = msg else { bail!("{}: connection closed", self.id()) };
                    let d = msg?;
                    match d.env.kind() {
                        Some(Kind::Preview) => self.on_preview(&d)?,
                        Some(Kind::Arrow) => {
                            let a: ArrowPayload = d.env.payload()?;
                            let step = NUDGE_FRACTION * self.camera.viewport.width as f64;
                            self.nudge.0 += a.dx * step;
                            self.nudge.1 += a.dy * step;
                        }
                        Some(Kind::CaptureOrder) => captured = Some(self.on_capture_order(&d)?),
                        Some(Kind::ResultReady) => {
                            let result: ResultReady = d.env.payload()?;
                            let (viewport, capture_ms) = captured.context("result arrived before any capture order")?;
                            return Ok(Outcome { viewport, capture_ms, result });
                        }
                        Some(Kind::Error) => {
                            let e: ErrorPayload = d.env.payload()?;
                            match (e.code.as_str(), e.in_reply_to.as_deref()) {
                                ("unplaced_members", Some("capture_order")) => self.capture_requested = false,
                                ("session_aborted" | "render_failed", _) => bail!("{}: {} ({})", self.id(), e.code, e.message),
                                _ => warn!(device = %self.id(), code = %e.code, "server error: {}", e.message),
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    fn on_tick(&mut self) -> anyhow::Result<()> {
        let (dx, dy) = match self.cfg.script {
            Script::Spread => (self.spread_step(), 0.0),
            Script::Follow => {
                let m = self.max_step();
                let step = (self.nudge.0.clamp(-m, m), self.nudge.1.clamp(-m, m));
                self.nudge.0 -= step.0;
                self.nudge.1 -= step.1;
                step
            }
        };
        let scene = self.scene.clone();
        self.camera.pan_within(dx, dy, &scene);

        let now = self.link.now_ms();
        let full = render_viewport(&scene, &self.camera, now as f64 / 1000.0)?;
        let small = downscale_to_max_dim(&full, self.cfg.preview_max_dim);
        let jpeg = encode_jpeg(&small, FRAME_JPEG_QUALITY)?;
        self.seq += 1;
        let v = self.camera.viewport;
        self.sent_positions.insert(self.seq, (v.x, v.y));
        while self.sent_positions.len() > 64 {
            self.sent_positions.pop_first();
        }
        let payload = FramePayload { width: small.width(), height: small.height(), jpeg: encode_b64(&jpeg) };
        self.link.send(Envelope::new(Kind::Frame, now, &payload).with_seq(self.seq));
        self.log.lock().expect("log lock").trajectories.push(TrajectorySample {
            t_ms: now,
            tick: self.tick,
            device: self.id().clone(),
            x: v.x,
            y: v.y,
        });
        Ok(())
    }

    fn quad(&self, d: &DeviceId) -> Option<&QuadInfo> {
        self.quads.iter().find(|q| &q.device_id == d)
    }

    /// This client's overlap with its parent in the latest preview. With
    /// `dead_reckon`, corrected for how far this client has moved since the
    /// frame the preview used.
    fn overlap_of(&self, index: usize, dead_reckon: bool) -> Option<f64> {
        let (parent, side) = row_position(index)?;
        let me = self.quad(&self.ids[index])?;
        let p = self.quad(&self.ids[parent])?;
        let mut shift = 0.0;
        if dead_reckon {
            if let Some(&(x_then, _)) = self.sent_positions.get(&me.seq) {
                let (l, r) = x_extent(&me.corners);
                shift = (self.camera.viewport.x - x_then) * (r - l) / self.camera.viewport.width as f64;
            }
        }
        Some(row_overlap(&me.corners, &p.corners, side, shift))
    }

    fn spread_step(&mut self) -> f64 {
        let Some((_, side)) = row_position(self.index) else { return 0.0 };
        let now = self.link.now_ms();
        let width = self.camera.viewport.width as f64;
        let placed = !self.unplaced.contains(self.id());
        match self.overlap_of(self.index, true).filter(|_| placed) {
            Some(overlap) => {
                self.unplaced_since = None;
                let err = overlap - self.cfg.target_overlap;
                if err.abs() < SPREAD_DEADBAND {
                    return 0.0;
                }
                let m = self.max_step();
                (side * err * width * SPREAD_GAIN).clamp(-m, m)
            }
            None if self.quads.is_empty() => 0.0,
            None => {
                let since = *self.unplaced_since.get_or_insert(now);
                if now.saturating_sub(since) > UNPLACED_BACKOFF_MS {
                    -side * 0.05 * width
                } else {
                    0.0
                }
            }
        }
    }

    fn on_preview(&mut self, d: &Delivered) -> anyhow::Result<()> {
        let p: PreviewPayload = d.env.payload()?;
        self.tick = p.tick;
        self.quads = p.quads;
        self.unplaced = p.unplaced;
        if self.is_host() {
            self.log.lock().expect("log lock").preview_ticks.push((p.tick, d.receipt_ms as u64));
            self.host_decide();
        }
        Ok(())
    }

    fn host_decide(&mut self) {
        if !self.streaming || self.capture_requested {
            return;
        }
        let now = self.link.now_ms();
        let tolerance = match self.cfg.script {
            Script::Spread => SPREAD_TOLERANCE,
            Script::Follow => FOLLOW_TOLERANCE,
        };
        let all_placed = self.unplaced.is_empty() && self.ids.iter().all(|d| self.quad(d).is_some());
        let mut ready = all_placed;
        for i in 1..self.ids.len() {
            let err = self.overlap_of(i, false).map(|o| o - self.cfg.target_overlap);
            let ok = err.is_some_and(|e| e.abs() <= tolerance);
            ready &= ok;
            if self.cfg.script == Script::Follow && !ok {
                if let (Some(e), Some((_, side))) = (err, row_position(i)) {
                    self.instruct(i, e.signum() * side, now);
                }
            }
        }
        if !ready {
            self.settled_since = None;
            return;
        }
        let since = *self.settled_since.get_or_insert(now);
        if now - since >= SETTLE_MS {
            debug!("host orders capture");
            self.capture_requested = true;
            self.link.send(Envelope::new(Kind::CaptureOrder, now, &CaptureRequest { allow_unplaced: false }));
        }
    }

    fn instruct(&mut self, target: usize, dx: f64, now: u64) {
        let id = self.ids[target].clone();
        if self.last_instruction.get(&id).is_some_and(|&t| now - t < FOLLOW_REINSTRUCT_MS) {
            return;
        }
        self.last_instruction.insert(id.clone(), now);
        self.link.send(Envelope::new(Kind::Instruct, now, &InstructPayload { target: id.clone(), dx, dy: 0.0 }));
        self.log.lock().expect("log lock").instructions.push(InstructionRecord { t_ms: now, target: id, dx, dy: 0.0 });
    }

    /// Stops streaming and uploads the capture. The capture instant is the
    /// order's receipt plus its countdown on the shared clock; the render
    /// uses the scene at that instant, so there is no need to sleep through
    /// the countdown.
    fn on_capture_order(&mut self, d: &Delivered) -> anyhow::Result<(Viewport, f64)> {
        let order: CaptureOrderPayload = d.env.payload()?;
        self.streaming = false;
        let capture_ms = d.receipt_ms + order.countdown_ms as f64;
        let shot = render_viewport(&self.scene, &self.camera, capture_ms / 1000.0)?;
        let upload = CaptureUpload {
            order_id: order.order_id,
            capture_timestamp_ms: capture_ms.round() as u64,
            png: encode_b64(&encode_png(&shot)?),
        };
        self.link.send(Envelope::new(Kind::CaptureUpload, self.link.now_ms(), &upload));
        Ok((self.camera.viewport, capture_ms))
    }
}

/// Ground truth against what the server recovered, all in the host's
/// capture pixel frame.
#[derive(Clone, Debug)]
pub struct LayoutCheck {
    /// `[left, top, right, bottom]` of the union of the true viewports.
    pub truth_bounds: [f64; 4],
    /// The same for the recovered placements.
    pub recovered_bounds: [f64; 4],
    /// Largest per-side difference between the two.
    pub max_side_error_px: f64,
    /// Overlap fractions of horizontally adjacent tiles, recovered.
    pub adjacent_overlaps: Vec<f64>,
    /// The same from ground truth.
    pub truth_overlaps: Vec<f64>,
    pub unplaced: Vec<String>,
}

fn bounds_of(quads: impl IntoIterator<Item = [Point; 4]>) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for q in quads {
        for p in q {
            b = [b[0].min(p.x), b[1].min(p.y), b[2].max(p.x), b[3].max(p.y)];
        }
    }
    b
}

/// Overlap fractions between neighbours in left-to-right order.
fn adjacent_overlaps(mut boxes: Vec<[f64; 4]>) -> Vec<f64> {
    boxes.sort_by(|a, b| (a[0] + a[2]).total_cmp(&(b[0] + b[2])));
    boxes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
            let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
            let area = ((a[2] - a[0]) * (a[3] - a[1])).min((b[2] - b[0]) * (b[3] - b[1]));
            iw * ih / area
        })
        .collect()
}

pub fn check_layout(a: &SessionArtifacts) -> LayoutCheck {
    let host_view = a.final_viewports[a.host()];
    let (hx, hy) = host_view.origin();
    let truth: Vec<[Point; 4]> = a
        .final_viewports
        .values()
        .map(|v| {
            let (x, y) = v.origin();
            AffineTransform::translation((x - hx) as f64, (y - hy) as f64).frame_corners(v.width, v.height)
        })
        .collect();
    let recovered: Vec<[Point; 4]> = a
        .meta
        .captures
        .iter()
        .filter_map(|c| Some(AffineTransform::from_params(c.placement?).frame_corners(c.width, c.height)))
        .collect();
    let truth_bounds = bounds_of(truth.iter().copied());
    let recovered_bounds = bounds_of(recovered.iter().copied());
    let max_side_error_px =
        truth_bounds.iter().zip(&recovered_bounds).map(|(t, r)| (t - r).abs()).fold(0.0, f64::max);
    LayoutCheck {
        truth_bounds,
        recovered_bounds,
        max_side_error_px,
        adjacent_overlaps: adjacent_overlaps(recovered.into_iter().map(|q| bounds_of([q])).collect()),
        truth_overlaps: adjacent_overlaps(truth.into_iter().map(|q| bounds_of([q])).collect()),
        unplaced: a.meta.unplaced.clone(),
    }
}

/// Instructions whose target did not move in the instructed direction
/// within `within_ms`. Each entry describes one failure.
pub fn unfollowed_instructions(
    instructions: &[InstructionRecord],
    trajectories: &[TrajectorySample],
    within_ms: u64,
) -> Vec<String> {
    let position_at = |d: &DeviceId, t: u64| {
        trajectories.iter().filter(|s| &s.device == d && s.t_ms <= t).max_by_key(|s| s.t_ms).map(|s| (s.x, s.y))
    };
    let mut failures = Vec::new();
    for ins in instructions {
        let before = position_at(&ins.target, ins.t_ms);
        let after = position_at(&ins.target, ins.t_ms + within_ms);
        let moved = match (before, after) {
            (Some(b), Some(a)) => (a.0 - b.0) * ins.dx + (a.1 - b.1) * ins.dy > 0.0,
            _ => false,
        };
        if !moved {
            failures.push(format!(
                "{} at {} ms: ({}, {}) not followed ({before:?} -> {after:?})",
                ins.target, ins.t_ms, ins.dx, ins.dy
            ));
        }
    }
    failures
}

/// `tick,t_ms,device,x,y` rows.
pub fn trajectories_csv(samples: &[TrajectorySample]) -> String {
    let mut out = String::from("tick,t_ms,device,x,y\n");
    for s in samples {
        out.push_str(&format!("{},{},{},{:.2},{:.2}\n", s.tick, s.t_ms, s.device, s.x, s.y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_alternates_around_the_host() {
        assert_eq!(row_position(0), None);
        assert_eq!(row_position(1), Some((0, 1.0)));
        assert_eq!(row_position(2), Some((0, -1.0)));
        assert_eq!(row_position(3), Some((1, 1.0)));
        assert_eq!(row_position(4), Some((2, -1.0)));
    }

    #[test]
    fn row_overlap_is_signed_and_scale_free() {
        let q = |x: f64, w: f64| [[x, 0.0], [x + w, 0.0], [x + w, 10.0], [x, 10.0]];
        assert!((row_overlap(&q(80.0, 100.0), &q(0.0, 100.0), 1.0, 0.0) - 0.2).abs() < 1e-12);
        assert!((row_overlap(&q(8.0, 10.0), &q(0.0, 10.0), 1.0, 0.0) - 0.2).abs() < 1e-12);
        assert!((row_overlap(&q(-80.0, 100.0), &q(0.0, 100.0), -1.0, 0.0) - 0.2).abs() < 1e-12);
        assert!((row_overlap(&q(0.0, 100.0), &q(0.0, 100.0), 1.0, 30.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn adjacent_overlaps_sort_left_to_right() {
        let o = adjacent_overlaps(vec![[80.0, 0.0, 180.0, 10.0], [0.0, 0.0, 100.0, 10.0], [150.0, 0.0, 250.0, 10.0]]);
        assert_eq!(o.len(), 2);
        assert!((o[0] - 0.2).abs() < 1e-12 && (o[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unfollowed_instructions_are_reported() {
        let d = DeviceId::new("d1");
        let s = |t, x| TrajectorySample { t_ms: t, tick: 0, device: d.clone(), x, y: 0.0 };
        let traj = vec![s(0, 10.0), s(300, 10.0), s(600, 40.0), s(2000, 40.0)];
        let ok = InstructionRecord { t_ms: 100, target: d.clone(), dx: 1.0, dy: 0.0 };
        let wrong_way = InstructionRecord { t_ms: 100, target: d.clone(), dx: -1.0, dy: 0.0 };
        let too_late = InstructionRecord { t_ms: 700, target: d.clone(), dx: 1.0, dy: 0.0 };
        assert!(unfollowed_instructions(&[ok], &traj, 1000).is_empty());
        assert_eq!(unfollowed_instructions(&[wrong_way, too_late], &traj, 1000).len(), 2);
    }
}

//! Connection handling and the shared session hub.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use bytes::Bytes;
use copano_core::alignment::RegistrationParams;
use copano_core::ids::{DeviceId, GroupId, SessionId};
use copano_core::imaging::{decode, encode_png, PREVIEW_MAX_DIM};
use copano_core::pipeline::render_final;
use copano_core::session::{
    CaptureFanout, CaptureOrder, CollectStatus, Frame, FrameData, Ingest, Phase, ProtocolError, Registry,
    SessionState, SessionSummary, Upload,
};
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};
use tokio::task::JoinSet;
use tokio_util::codec::Framed;
use tracing::{debug, info, warn};

use crate::clock::Clock;
use crate::persist::{self, CaptureMeta, SessionMeta};
use crate::stats::{Stats, StatsSnapshot};
use crate::wire::{
    decode_b64, error_code, ArrowPayload, CaptureOrderPayload, CaptureRequest, CaptureUpload, Envelope,
    ErrorPayload, FramePayload, GroupUpdate, InstructPayload, JoinRequest, Kind, MemberInfo, Registered, ResultReady,
    SessionStarted, UploadAck,
};
use crate::{client, http, preview};

/// Messages a connection may have queued before previews start being
/// dropped for it.
pub(crate) const OUTBOX_CAPACITY: usize = 64;
/// Outbox slots kept free for control messages; previews never use them.
pub(crate) const CONTROL_RESERVE: usize = 16;
pub const FINAL_REGISTER_MAX_DIM: u32 = 640;
const HOUSEKEEPING_PERIOD: Duration = Duration::from_millis(100);

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub preview_max_fps: u32,
    pub frame_max_dim: u32,
    /// Captures are registered on copies of at most this size before the
    /// final blend, which always runs at full resolution.
    pub final_register_max_dim: u32,
    pub data_dir: PathBuf,
    /// Static files served under `/app`.
    pub app_dir: Option<PathBuf>,
    /// Seed for id tokens; random when absent.
    pub registry_seed: Option<u64>,
    pub registration: RegistrationParams,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            preview_max_fps: 20,
            frame_max_dim: PREVIEW_MAX_DIM,
            final_register_max_dim: FINAL_REGISTER_MAX_DIM,
            data_dir: PathBuf::from("data"),
            app_dir: None,
            registry_seed: None,
            registration: RegistrationParams::default(),
        }
    }
}

pub(crate) type Outbox = mpsc::Sender<Bytes>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum ResultStatus {
    Pending,
    Rendering,
    Ready,
    Failed(String),
}

pub(crate) struct Slot {
    pub state: SessionState,
    /// Signalled whenever a newer viewfinder frame is stored.
    pub wake: Arc<Notify>,
    pub result: ResultStatus,
}

pub(crate) struct Hub {
    pub registry: Registry,
    pub conns: HashMap<DeviceId, Outbox>,
    pub sessions: HashMap<SessionId, Slot>,
    pub device_session: HashMap<DeviceId, SessionId>,
}

impl Hub {
    fn send(&self, to: &DeviceId, bytes: &Bytes) {
        if let Some(tx) = self.conns.get(to) {
            if tx.try_send(bytes.clone()).is_err() {
                warn!(device = %to, "outbox full or closed; control message dropped");
            }
        }
    }

    fn send_group_update(&self, group: &GroupId, now: u64) {
        let Ok(members) = self.registry.members(group) else { return };
        let update = GroupUpdate {
            group_id: group.clone(),
            members: members
                .iter()
                .map(|m| MemberInfo { device_id: m.device_id.clone(), display_color: m.display_color, is_host: m.is_host })
                .collect(),
        };
        let bytes = Envelope::new(Kind::Join, now, &update).to_bytes();
        for m in &members {
            self.send(&m.device_id, &bytes);
        }
    }

    fn slot_of(&mut self, device: &DeviceId) -> Result<(SessionId, &mut Slot), ProtocolError> {
        let sid = self.device_session.get(device).ok_or_else(|| ProtocolError::NotMember(device.clone()))?;
        let slot = self.sessions.get_mut(sid).ok_or_else(|| ProtocolError::UnknownSession(sid.clone()))?;
        Ok((sid.clone(), slot))
    }
}

pub(crate) struct Shared {
    pub config: ServerConfig,
    pub clock: Arc<dyn Clock>,
    pub hub: Mutex<Hub>,
    pub stats: Stats,
}

impl Shared {
    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn hub(&self) -> MutexGuard<'_, Hub> {
        self.hub.lock().expect("hub lock poisoned")
    }
}

/// A running server. Dropping the handle leaves it running; call
/// [`ServerHandle::shutdown`] to stop it.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    tasks: JoinSet<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot()
    }

    pub fn session_phase(&self, id: &SessionId) -> Option<Phase> {
        self.shared.hub().sessions.get(id).map(|s| s.state.phase())
    }

    pub fn session_summary(&self, id: &SessionId) -> Option<SessionSummary> {
        self.shared.hub().sessions.get(id).and_then(|s| s.state.summary().cloned())
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.shared.config.data_dir
    }

    /// Runs until the accept loop stops.
    pub async fn wait(mut self) {
        while self.tasks.join_next().await.is_some() {}
    }

    pub async fn shutdown(mut self) {
        self.tasks.shutdown().await;
    }
}

/// Binds the listener and starts accepting clients.
pub async fn start(config: ServerConfig, clock: Arc<dyn Clock>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    std::fs::create_dir_all(&config.data_dir)?;
    let registry = match config.registry_seed {
        Some(seed) => Registry::with_seed(seed),
        None => Registry::new(),
    };
    let shared = Arc::new(Shared {
        config,
        clock,
        hub: Mutex::new(Hub {
            registry,
            conns: HashMap::new(),
            sessions: HashMap::new(),
            device_session: HashMap::new(),
        }),
        stats: Stats::default(),
    });
    info!(%addr, "listening");

    let mut tasks = JoinSet::new();
    let s = shared.clone();
    tasks.spawn(async move {
        let mut conns = JoinSet::new();
        loop {
            tokio::select! {
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!(%peer, "connection");
                        conns.spawn(serve_socket(s.clone(), stream));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
                Some(_) = conns.join_next(), if !conns.is_empty() => {}
            }
        }
    });
    let s = shared.clone();
    tasks.spawn(housekeeping(s));
    Ok(ServerHandle { addr, shared, tasks })
}

/// Routes a socket to HTTP or to the message protocol by its first bytes.
/// A protocol message never starts with "GET " or "HEAD": that length
/// prefix would exceed the message size cap.
async fn serve_socket(shared: Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let mut head = [0u8; 4];
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match stream.peek(&mut head).await {
            Ok(0) | Err(_) => return,
            Ok(n) if n >= 4 => break,
            Ok(_) if Instant::now() > deadline => return,
            Ok(_) => tokio::time::sleep(Duration::from_millis(1)).await,
        }
    }
    if &head == b"GET " || &head == b"HEAD" {
        http::serve(shared, stream).await;
    } else {
        serve_protocol(shared, stream).await;
    }
}

async fn serve_protocol(shared: Arc<Shared>, stream: TcpStream) {
    let (mut sink, mut source) = Framed::new(stream, client::codec()).split();
    let (tx, mut rx) = mpsc::channel::<Bytes>(OUTBOX_CAPACITY);
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if sink.send(bytes).await.is_err() {
                break;
            }
        }
    });

    let mut me: Option<DeviceId> = None;
    while let Some(item) = source.next().await {
        let read_at = Instant::now();
        let Ok(bytes) = item else { break };
        let replies = handle_message(&shared, &mut me, &tx, &bytes, read_at);
        for r in replies {
            if tx.send(r).await.is_err() {
                break;
            }
        }
    }
    if let Some(d) = me {
        disconnect(&shared, &d);
    }
    drop(tx);
    let _ = writer.await;
}

fn error_reply(now: u64, code: &str, message: impl Into<String>, kind: Option<&str>) -> Bytes {
    Envelope::new(Kind::Error, now, &ErrorPayload::new(code, message, kind)).to_bytes()
}

fn protocol_error(now: u64, e: &ProtocolError, kind: &str) -> Bytes {
    error_reply(now, error_code(e), e.to_string(), Some(kind))
}

/// Handles one message; returns the replies for the sender. Messages to
/// other devices are queued directly.
fn handle_message(shared: &Arc<Shared>, me: &mut Option<DeviceId>, tx: &Outbox, bytes: &[u8], read_at: Instant) -> Vec<Bytes> {
    let now = shared.now();
    let env = match Envelope::from_bytes(bytes) {
        Ok(env) => env,
        Err(e) => return vec![error_reply(now, "bad_message", e.to_string(), None)],
    };
    let Some(kind) = env.kind() else {
        return vec![error_reply(now, "unknown_kind", format!("unknown message kind {:?}", env.kind), Some(&env.kind))];
    };
    let bad = |e: crate::wire::WireError| vec![error_reply(now, "bad_message", e.to_string(), Some(kind.as_str()))];

    if kind == Kind::Register {
        if me.is_some() {
            return vec![error_reply(now, "already_registered", "this connection is already registered", Some("register"))];
        }
        let mut hub = shared.hub();
        let rec = hub.registry.register_device(now);
        hub.conns.insert(rec.device_id.clone(), tx.clone());
        *me = Some(rec.device_id.clone());
        let reply = Registered {
            device_id: rec.device_id.clone(),
            group_id: rec.group_id,
            display_color: rec.display_color,
            is_host: rec.is_host,
        };
        return vec![Envelope::new(Kind::Register, now, &reply).with_device(&rec.device_id).to_bytes()];
    }
    let Some(device) = me.clone() else {
        return vec![error_reply(now, "not_registered", "register first", Some(kind.as_str()))];
    };

    match kind {
        Kind::Register => unreachable!("handled above"),
        Kind::Join => {
            let req: JoinRequest = match env.payload() {
                Ok(r) => r,
                Err(e) => return bad(e),
            };
            let mut hub = shared.hub();
            hub.registry.touch(&device, now);
            let old = hub.registry.device(&device).map(|d| d.group_id.clone());
            match hub.registry.join_group(&device, &req.group_id, now) {
                Ok(rec) => {
                    hub.send_group_update(&rec.group_id, now);
                    if let Some(old) = old.filter(|g| g != &rec.group_id) {
                        hub.send_group_update(&old, now);
                    }
                    vec![]
                }
                Err(e) => vec![protocol_error(now, &e, "join")],
            }
        }
        Kind::Start => {
            let mut hub = shared.hub();
            match hub.registry.start_session(&device, now) {
                Ok(state) => {
                    let sid = state.session_id().clone();
                    let members: Vec<MemberInfo> = state
                        .members()
                        .iter()
                        .map(|d| MemberInfo {
                            device_id: d.clone(),
                            display_color: state.color(d).unwrap_or(0),
                            is_host: d == state.host(),
                        })
                        .collect();
                    let started = SessionStarted {
                        session_id: sid.clone(),
                        group_id: state.group_id().clone(),
                        host: state.host().clone(),
                        members,
                        single_member_warning: state.single_member_warning(),
                    };
                    let bytes = Envelope::new(Kind::Start, now, &started).with_session(&sid).to_bytes();
                    for d in state.members() {
                        hub.device_session.insert(d.clone(), sid.clone());
                    }
                    for d in state.members() {
                        hub.send(d, &bytes);
                    }
                    let wake = Arc::new(Notify::new());
                    hub.sessions.insert(sid.clone(), Slot { state, wake, result: ResultStatus::Pending });
                    info!(session = %sid, "session started");
                    tokio::spawn(preview::run(shared.clone(), sid));
                    vec![]
                }
                Err(e) => vec![protocol_error(now, &e, "start")],
            }
        }
        Kind::Frame => {
            let Some(seq) = env.seq else {
                return vec![error_reply(now, "bad_message", "frame without seq", Some("frame"))];
            };
            let payload: FramePayload = match env.payload() {
                Ok(p) => p,
                Err(e) => return bad(e),
            };
            let jpeg = match decode_b64(&payload.jpeg) {
                Ok(b) => b,
                Err(e) => return bad(e),
            };
            let frame = Frame { device_id: device.clone(), seq, timestamp_ms: env.sent_at_ms, data: jpeg.into() };
            let mut hub = shared.hub();
            let result = hub.slot_of(&device).and_then(|(_, slot)| {
                let r = slot.state.ingest_viewfinder_frame(frame, now);
                if r == Ok(Ingest::Stored) {
                    slot.wake.notify_one();
                }
                r
            });
            drop(hub);
            match result {
                Ok(ingest) => {
                    shared.stats.frame(ingest == Ingest::Stored, read_at.elapsed());
                    vec![]
                }
                // Clients keep streaming through the countdown; late frames
                // are simply not needed.
                Err(ProtocolError::WrongPhase(_)) => vec![],
                Err(e) => vec![protocol_error(now, &e, "frame")],
            }
        }
        Kind::Instruct => {
            let p: InstructPayload = match env.payload() {
                Ok(p) => p,
                Err(e) => return bad(e),
            };
            let mut hub = shared.hub();
            let routed = hub.slot_of(&device).and_then(|(sid, slot)| {
                slot.state.heartbeat(&device, now);
                slot.state.route_instruction(&device, &p.target, (p.dx, p.dy), now).map(|i| (sid, i))
            });
            match routed {
                Ok((sid, ins)) => {
                    let arrow = ArrowPayload {
                        from: ins.from,
                        dx: ins.dx,
                        dy: ins.dy,
                        issued_at_ms: ins.issued_at_ms,
                        expires_at_ms: ins.expires_at_ms,
                    };
                    let bytes = Envelope::new(Kind::Arrow, now, &arrow).with_session(&sid).to_bytes();
                    hub.send(&ins.target, &bytes);
                    vec![]
                }
                Err(e) => vec![protocol_error(now, &e, "instruct")],
            }
        }
        Kind::CaptureOrder => {
            let req: CaptureRequest =
                if env.payload.is_null() { CaptureRequest::default() } else { env.payload().unwrap_or_default() };
            let mut hub = shared.hub();
            let Hub { sessions, conns, device_session, .. } = &mut *hub;
            let Some(slot) = device_session.get(&device).and_then(|sid| sessions.get_mut(sid)) else {
                return vec![protocol_error(now, &ProtocolError::NotMember(device.clone()), "capture_order")];
            };
            slot.state.heartbeat(&device, now);
            let mut fanout = OutboxFanout { conns, bytes: None };
            match slot.state.trigger_capture(&device, req.allow_unplaced, now, &mut fanout) {
                Ok(order) => {
                    info!(session = %order.session_id, order = %order.order_id, "capture order sent");
                    vec![]
                }
                Err(e) => vec![protocol_error(now, &e, "capture_order")],
            }
        }
        Kind::CaptureUpload => {
            let p: CaptureUpload = match env.payload() {
                Ok(p) => p,
                Err(e) => return bad(e),
            };
            let png = match decode_b64(&p.png) {
                Ok(b) => b,
                Err(e) => return bad(e),
            };
            let mut hub = shared.hub();
            let collected = hub.slot_of(&device).and_then(|(sid, slot)| {
                slot.state
                    .collect_capture(&device, &p.order_id, p.capture_timestamp_ms, FrameData::from(png), now)
                    .map(|st| (sid, st, slot.state.uploads().len(), slot.state.recipients().len()))
            });
            drop(hub);
            match collected {
                Ok((sid, status, received, expected)) => {
                    let ack = UploadAck {
                        order_id: p.order_id,
                        received,
                        expected,
                        duplicate: status == CollectStatus::Duplicate,
                    };
                    if status == CollectStatus::Ready {
                        finalize(shared, &sid);
                    }
                    vec![Envelope::new(Kind::CaptureUpload, now, &ack).with_session(&sid).to_bytes()]
                }
                Err(e) => vec![protocol_error(now, &e, "capture_upload")],
            }
        }
        Kind::Preview | Kind::Arrow | Kind::ResultReady | Kind::Error => {
            vec![error_reply(now, "unexpected_kind", format!("{} is sent by the server only", kind.as_str()), Some(kind.as_str()))]
        }
    }
}

/// Delivers capture orders through the connections' outboxes, reserving a
/// slot in every recipient's queue before anyone is sent anything.
struct OutboxFanout<'a> {
    conns: &'a HashMap<DeviceId, Outbox>,
    bytes: Option<Bytes>,
}

impl CaptureFanout for OutboxFanout<'_> {
    type Permit = mpsc::OwnedPermit<Bytes>;

    fn reserve(&mut self, device: &DeviceId) -> Option<Self::Permit> {
        self.conns.get(device)?.clone().try_reserve_owned().ok()
    }

    fn deliver(&mut self, _: &DeviceId, permit: Self::Permit, order: &CaptureOrder) {
        // One serialization, so every member receives identical bytes.
        let bytes = self.bytes.get_or_insert_with(|| {
            let p = CaptureOrderPayload {
                order_id: order.order_id.clone(),
                countdown_ms: order.countdown_ms,
                issued_at_ms: order.issued_at_ms,
            };
            Envelope::new(Kind::CaptureOrder, order.issued_at_ms, &p).with_session(&order.session_id).to_bytes()
        });
        permit.send(bytes.clone());
    }
}

fn disconnect(shared: &Arc<Shared>, device: &DeviceId) {
    let now = shared.now();
    let mut hub = shared.hub();
    hub.conns.remove(device);
    if let Ok((sid, slot)) = hub.slot_of(device) {
        let live = slot.state.disconnect(device);
        if live.aborted {
            abort_session(&mut hub, &sid, now, "the host disconnected");
        }
    }
    let group = hub.registry.device(device).map(|d| d.group_id.clone());
    hub.registry.remove_device(device);
    if let Some(g) = group {
        hub.send_group_update(&g, now);
    }
    info!(%device, "disconnected");
}

fn abort_session(hub: &mut Hub, sid: &SessionId, now: u64, why: &str) {
    let Some(slot) = hub.sessions.get_mut(sid) else { return };
    slot.state.abort();
    slot.result = ResultStatus::Failed(why.to_owned());
    let group = slot.state.group_id().clone();
    let members = slot.state.members().to_vec();
    hub.registry.release_group(&group);
    let bytes = Envelope::new(Kind::Error, now, &ErrorPayload::new("session_aborted", why, None)).with_session(sid).to_bytes();
    for m in &members {
        hub.send(m, &bytes);
    }
    warn!(session = %sid, "aborted: {why}");
}

async fn housekeeping(shared: Arc<Shared>) {
    let mut interval = tokio::time::interval(HOUSEKEEPING_PERIOD);
    loop {
        interval.tick().await;
        let now = shared.now();
        let mut due = Vec::new();
        {
            let mut hub = shared.hub();
            let mut aborted = Vec::new();
            for (sid, slot) in hub.sessions.iter_mut() {
                if slot.state.phase().is_terminal() {
                    continue;
                }
                if slot.state.poll_clock(now) {
                    due.push(sid.clone());
                }
                if slot.state.check_liveness(now).aborted {
                    aborted.push(sid.clone());
                }
            }
            for sid in aborted {
                abort_session(&mut hub, &sid, now, "the host went silent");
            }
        }
        for sid in due {
            finalize(&shared, &sid);
        }
    }
}

/// Closes collection and renders the final panorama in the background.
fn finalize(shared: &Arc<Shared>, sid: &SessionId) {
    let now = shared.now();
    let (summary, uploads, group, created_at, issued_at) = {
        let mut hub = shared.hub();
        let Some(slot) = hub.sessions.get_mut(sid) else { return };
        let Ok(summary) = slot.state.finalize(now) else { return };
        slot.result = ResultStatus::Rendering;
        let uploads: Vec<Upload> = slot.state.uploads().values().cloned().collect();
        let issued_at = slot.state.order().map(|o| o.issued_at_ms).unwrap_or(now);
        let created_at = slot.state.created_at_ms();
        let group = slot.state.group_id().clone();
        hub.registry.release_group(&group);
        (summary, uploads, group, created_at, issued_at)
    };
    info!(session = %sid, received = summary.received.len(), partial = summary.partial, skew_ms = summary.skew_ms, "collection closed");

    let shared = shared.clone();
    let sid = sid.clone();
    tokio::spawn(async move {
        let job_shared = shared.clone();
        let job_summary = summary.clone();
        let rendered = tokio::task::spawn_blocking(move || {
            render_and_persist(&job_shared.config, &job_summary, &group, &uploads, created_at, issued_at)
        })
        .await
        .unwrap_or_else(|e| Err(format!("render task failed: {e}")));

        let now = shared.now();
        let mut hub = shared.hub();
        let recipients = hub.sessions.get(&sid).map(|s| s.state.recipients().to_vec()).unwrap_or_default();
        let bytes = match rendered {
            Ok((width, height, placed)) => {
                if let Some(slot) = hub.sessions.get_mut(&sid) {
                    slot.result = ResultStatus::Ready;
                }
                let ready = ResultReady {
                    session_id: sid.clone(),
                    url: format!("/sessions/{sid}/{}", persist::PANORAMA_FILE),
                    partial: summary.partial,
                    skew_ms: summary.skew_ms,
                    members: summary.members.clone(),
                    placed,
                    width,
                    height,
                };
                info!(session = %sid, width, height, "panorama ready");
                Envelope::new(Kind::ResultReady, now, &ready).with_session(&sid).to_bytes()
            }
            Err(msg) => {
                if let Some(slot) = hub.sessions.get_mut(&sid) {
                    slot.result = ResultStatus::Failed(msg.clone());
                }
                warn!(session = %sid, "render failed: {msg}");
                Envelope::new(Kind::Error, now, &ErrorPayload::new("render_failed", msg, None)).with_session(&sid).to_bytes()
            }
        };
        for d in &recipients {
            hub.send(d, &bytes);
        }
    });
}

/// Decodes the uploads, renders and writes every artifact. Returns the
/// panorama size and the placed devices.
fn render_and_persist(
    config: &ServerConfig,
    summary: &SessionSummary,
    group: &GroupId,
    uploads: &[Upload],
    created_at_ms: u64,
    order_issued_at_ms: u64,
) -> Result<(u32, u32, Vec<DeviceId>), String> {
    let dir = persist::session_dir(&config.data_dir, &summary.session_id);
    let mut captures = Vec::new();
    for u in uploads {
        let FrameData::Encoded(bytes) = &u.data else { continue };
        match decode(bytes) {
            Ok(img) => {
                let png = if bytes.starts_with(b"\x89PNG") { bytes.to_vec() } else { encode_png(&img).map_err(|e| e.to_string())? };
                persist::write_file(&dir, &persist::capture_file(u.device_id.as_str()), &png).map_err(|e| e.to_string())?;
                captures.push((u.device_id.clone(), img));
            }
            Err(e) => warn!(device = %u.device_id, "undecodable capture: {e}"),
        }
    }
    let render = render_final(&captures, Some(&summary.host), &config.registration, config.final_register_max_dim)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| "no decodable captures".to_owned())?;
    let png = encode_png(&render.panorama).map_err(|e| e.to_string())?;
    persist::write_file(&dir, persist::PANORAMA_FILE, &png).map_err(|e| e.to_string())?;

    let layout = &render.layout;
    let meta = SessionMeta {
        session_id: summary.session_id.to_string(),
        group_id: group.to_string(),
        host: summary.host.to_string(),
        order_id: summary.order_id.to_string(),
        partial: summary.partial,
        skew_ms: summary.skew_ms,
        created_at_ms,
        order_issued_at_ms,
        completed_at_ms: summary.completed_at_ms,
        members: summary.members.iter().map(|d| d.to_string()).collect(),
        missing: summary.missing.iter().map(|d| d.to_string()).collect(),
        unplaced: layout.unplaced.iter().map(|d| d.to_string()).collect(),
        anchor: Some(layout.anchor.to_string()),
        panorama_width: render.panorama.width(),
        panorama_height: render.panorama.height(),
        captures: uploads
            .iter()
            .filter_map(|u| {
                let (_, img) = captures.iter().find(|(d, _)| d == &u.device_id)?;
                Some(CaptureMeta {
                    device_id: u.device_id.to_string(),
                    capture_timestamp_ms: u.capture_timestamp_ms,
                    received_at_ms: u.received_at_ms,
                    width: img.width(),
                    height: img.height(),
                    gain: render.gains.get(&u.device_id).copied(),
                    placement: layout.placements.get(&u.device_id).map(|t| t.params()),
                })
            })
            .collect(),
    };
    persist::write_file(&dir, persist::META_FILE, meta.to_toml().as_bytes()).map_err(|e| e.to_string())?;
    Ok((render.panorama.width(), render.panorama.height(), layout.placements.keys().cloned().collect()))
}

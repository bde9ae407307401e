//! The per-session preview loop.
//!
//! Two halves run side by side. The stitcher waits for a newer frame,
//! snapshots the latest frame of every active member and stitches on the
//! blocking pool, publishing each result. The broadcaster wakes at the
//! configured rate and sends the newest published preview to every member.
//! Frames that arrive while a stitch is running just replace each other, so
//! nothing queues up behind a slow stitch.

use std::sync::Arc;
use std::time::Duration;

use copano_core::ids::{DeviceId, SessionId};
use copano_core::imaging::encode_jpeg;
use copano_core::pipeline::IncrementalStitcher;
use copano_core::session::{FrameData, Phase};
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;
use tracing::debug;

use crate::server::{Outbox, Shared, CONTROL_RESERVE, OUTBOX_CAPACITY};
use crate::wire::{encode_b64, Envelope, Kind, PreviewPayload, QuadInfo, PREVIEW_JPEG_QUALITY};

/// One stitched preview, ready to be wrapped in a tick.
#[derive(Debug)]
struct Rendered {
    jpeg: String,
    width: u32,
    height: u32,
    anchor: Option<DeviceId>,
    quads: Vec<QuadInfo>,
    unplaced: Vec<DeviceId>,
}

pub(crate) async fn run(shared: Arc<Shared>, sid: SessionId) {
    let (tx, rx) = watch::channel::<Option<Arc<Rendered>>>(None);
    tokio::select! {
        _ = stitch_loop(shared.clone(), sid.clone(), tx) => {}
        _ = broadcast_loop(shared, sid.clone(), rx) => {}
    }
    debug!(session = %sid, "preview loop finished");
}

struct Snapshot {
    frames: Vec<(DeviceId, u64, FrameData)>,
    order: Vec<DeviceId>,
    host: DeviceId,
    colors: Vec<(DeviceId, u8)>,
    silent: Vec<DeviceId>,
}

async fn stitch_loop(shared: Arc<Shared>, sid: SessionId, out: watch::Sender<Option<Arc<Rendered>>>) {
    let Some(wake) = shared.hub().sessions.get(&sid).map(|s| s.wake.clone()) else { return };
    let mut stitcher = Some(IncrementalStitcher::new(shared.config.registration, shared.config.frame_max_dim));
    loop {
        wake.notified().await;
        let snap = {
            let hub = shared.hub();
            let Some(slot) = hub.sessions.get(&sid) else { return };
            if slot.state.phase() != Phase::CapturingPreview {
                return;
            }
            let st = &slot.state;
            let active = st.active_members();
            Snapshot {
                frames: active
                    .iter()
                    .filter_map(|d| st.latest_frames().get(d).map(|f| (d.clone(), f.seq, f.data.clone())))
                    .collect(),
                order: active.clone(),
                host: st.host().clone(),
                colors: st.members().iter().map(|d| (d.clone(), st.color(d).unwrap_or(0))).collect(),
                silent: st.silent_members().iter().cloned().collect(),
            }
        };
        if snap.frames.is_empty() {
            continue;
        }
        let mut st = stitcher.take().expect("stitcher is returned after every job");
        let job = tokio::task::spawn_blocking(move || {
            st.update(&snap.frames, &snap.host);
            let rendered = render(&st, &snap);
            (st, rendered)
        })
        .await;
        let Ok((st, rendered)) = job else { return };
        let layout = st.layout().cloned();
        stitcher = Some(st);
        shared.stats.stitch();
        if let Some(layout) = layout {
            let mut hub = shared.hub();
            if let Some(slot) = hub.sessions.get_mut(&sid) {
                if slot.state.phase() == Phase::CapturingPreview {
                    slot.state.set_layout(layout);
                }
            }
        }
        if let Some(r) = rendered {
            out.send_replace(Some(Arc::new(r)));
        }
    }
}

fn render(st: &IncrementalStitcher, snap: &Snapshot) -> Option<Rendered> {
    let layout = st.layout()?;
    let comp = st.composite(&snap.order);
    let jpeg = encode_jpeg(&comp.panorama, PREVIEW_JPEG_QUALITY).ok()?;
    let seqs: std::collections::BTreeMap<&DeviceId, u64> = snap.frames.iter().map(|(d, s, _)| (d, *s)).collect();
    let quads = snap
        .colors
        .iter()
        .filter_map(|(d, color)| {
            let q = comp.device_quads.get(d)?;
            Some(QuadInfo { device_id: d.clone(), color: *color, seq: seqs[d], corners: q.map(|p| [p.x, p.y]) })
        })
        .collect();
    let unplaced = snap
        .colors
        .iter()
        .map(|(d, _)| d)
        .filter(|d| !layout.is_placed(d) || snap.silent.contains(d))
        .cloned()
        .collect();
    Some(Rendered {
        jpeg: encode_b64(&jpeg),
        width: comp.panorama.width(),
        height: comp.panorama.height(),
        anchor: Some(layout.anchor.clone()),
        quads,
        unplaced,
    })
}

async fn broadcast_loop(shared: Arc<Shared>, sid: SessionId, latest: watch::Receiver<Option<Arc<Rendered>>>) {
    let fps = shared.config.preview_max_fps.max(1);
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / fps as f64));
    // Ticks stay on a fixed grid: a late tick is followed by a prompt one,
    // so the long-run rate is exactly the configured one.
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut tick = 0u64;
    loop {
        interval.tick().await;
        let recipients: Vec<Outbox> = {
            let hub = shared.hub();
            let Some(slot) = hub.sessions.get(&sid) else { return };
            if slot.state.phase() != Phase::CapturingPreview {
                return;
            }
            slot.state.active_members().iter().filter_map(|d| hub.conns.get(d).cloned()).collect()
        };
        let Some(r) = latest.borrow().clone() else { continue };
        tick += 1;
        let payload = PreviewPayload {
            tick,
            width: r.width,
            height: r.height,
            jpeg: r.jpeg.clone(),
            anchor: r.anchor.clone(),
            quads: r.quads.clone(),
            unplaced: r.unplaced.clone(),
        };
        // Serialized once: every member gets the same bytes.
        let bytes = Envelope::new(Kind::Preview, shared.now(), &payload).with_session(&sid).to_bytes();
        for tx in recipients {
            let room = tx.capacity() > CONTROL_RESERVE.min(OUTBOX_CAPACITY);
            let sent = room && tx.try_send(bytes.clone()).is_ok();
            shared.stats.preview(sent);
        }
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ProtocolError, ARROW_LIFESPAN_MS, CAPTURE_COUNTDOWN_MS, COLLECT_TIMEOUT_MS, SILENCE_TIMEOUT_MS};
use crate::alignment::PanoramaLayout;
use crate::ids::{DeviceId, GroupId, OrderId, SessionId};
use crate::imaging::{decode, CodecError, Image};

/// Session lifecycle. The derived order is the order phases are visited in;
/// a session's phase never decreases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Forming,
    CapturingPreview,
    Countdown,
    Collecting,
    Complete,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Complete | Phase::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forming => "forming",
            Phase::CapturingPreview => "capturing-preview",
            Phase::Countdown => "countdown",
            Phase::Collecting => "collecting",
            Phase::Complete => "complete",
            Phase::Aborted => "aborted",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pixels as they arrived: already decoded, or still in their wire encoding.
/// Frames are cheap to clone.
#[derive(Clone, Debug)]
pub enum FrameData {
    Decoded(Arc<Image>),
    Encoded(Arc<[u8]>),
}

impl FrameData {
    pub fn decode(&self) -> Result<Image, CodecError> {
        match self {
            FrameData::Decoded(img) => Ok((**img).clone()),
            FrameData::Encoded(bytes) => decode(bytes),
        }
    }
}

impl PartialEq for FrameData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (FrameData::Decoded(a), FrameData::Decoded(b)) => Arc::ptr_eq(a, b) || a == b,
            (FrameData::Encoded(a), FrameData::Encoded(b)) => a == b,
            _ => false,
        }
    }
}

impl From<Image> for FrameData {
    fn from(img: Image) -> Self {
        FrameData::Decoded(Arc::new(img))
    }
}

impl From<Vec<u8>> for FrameData {
    fn from(bytes: Vec<u8>) -> Self {
        FrameData::Encoded(bytes.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub device_id: DeviceId,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub data: FrameData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ingest {
    /// Replaced the previous latest frame of that device.
    Stored,
    /// Older than (or the same as) what is already held; dropped.
    Stale,
}

/// A movement hint from the host to one member. `dx, dy` is a unit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub from: DeviceId,
    pub target: DeviceId,
    pub dx: f64,
    pub dy: f64,
    pub issued_at_ms: u64,
    pub expires_at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureOrder {
    pub session_id: SessionId,
    pub order_id: OrderId,
    /// Members take their picture this long after receiving the order.
    pub countdown_ms: u64,
    pub issued_at_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub device_id: DeviceId,
    pub capture_timestamp_ms: u64,
    pub received_at_ms: u64,
    pub data: FrameData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectStatus {
    Progress { received: usize, expected: usize },
    /// Every expected upload is in; the session can be finalized.
    Ready,
    /// Byte-identical repeat of an upload already held.
    Duplicate,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Liveness {
    pub newly_silent: Vec<DeviceId>,
    /// The host went away and the session was aborted.
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: SessionId,
    pub order_id: OrderId,
    pub host: DeviceId,
    pub members: Vec<DeviceId>,
    pub received: Vec<DeviceId>,
    pub missing: Vec<DeviceId>,
    pub partial: bool,
    /// Spread between earliest and latest capture timestamp.
    pub skew_ms: u64,
    pub completed_at_ms: u64,
}

/// Hands capture orders to members. Delivery is split so the whole group
/// can be reserved before anyone receives an order: either every member
/// gets it, or nobody does.
pub trait CaptureFanout {
    type Permit;
    /// Claims room to deliver one order to `device`, or `None` if it cannot
    /// be reached.
    fn reserve(&mut self, device: &DeviceId) -> Option<Self::Permit>;
    /// Delivers through a previously reserved permit. Must not fail.
    fn deliver(&mut self, device: &DeviceId, permit: Self::Permit, order: &CaptureOrder);
}

/// Collects orders in memory; every device is reachable unless listed in
/// `unreachable`.
#[derive(Debug, Default)]
pub struct RecordingFanout {
    pub delivered: Vec<(DeviceId, CaptureOrder)>,
    pub unreachable: BTreeSet<DeviceId>,
}

impl CaptureFanout for RecordingFanout {
    type Permit = ();

    fn reserve(&mut self, device: &DeviceId) -> Option<()> {
        (!self.unreachable.contains(device)).then_some(())
    }

    fn deliver(&mut self, device: &DeviceId, _: (), order: &CaptureOrder) {
        self.delivered.push((device.clone(), order.clone()));
    }
}

/// One capture session: a frozen group of members and everything they send
/// between the start and the final panorama.
#[derive(Clone, Debug)]
pub struct SessionState {
    session_id: SessionId,
    group_id: GroupId,
    host: DeviceId,
    members: Vec<DeviceId>,
    colors: BTreeMap<DeviceId, u8>,
    phase: Phase,
    created_at_ms: u64,
    last_seen: BTreeMap<DeviceId, u64>,
    silent: BTreeSet<DeviceId>,
    latest_frames: BTreeMap<DeviceId, Frame>,
    /// Highest frame sequence number seen per device. Outlives the frame
    /// itself, which is dropped when a member goes silent.
    frame_seq: BTreeMap<DeviceId, u64>,
    layout: Option<PanoramaLayout>,
    instructions: Vec<Instruction>,
    order: Option<CaptureOrder>,
    orders_issued: u64,
    recipients: Vec<DeviceId>,
    uploads: BTreeMap<DeviceId, Upload>,
    summary: Option<SessionSummary>,
}

impl SessionState {
    pub(super) fn new(
        session_id: SessionId,
        group_id: GroupId,
        host: DeviceId,
        members: Vec<(DeviceId, u8)>,
        now_ms: u64,
    ) -> Self {
        Self {
            session_id,
            group_id,
            host,
            last_seen: members.iter().map(|(d, _)| (d.clone(), now_ms)).collect(),
            colors: members.iter().cloned().collect(),
            members: members.into_iter().map(|(d, _)| d).collect(),
            phase: Phase::CapturingPreview,
            created_at_ms: now_ms,
            silent: BTreeSet::new(),
            latest_frames: BTreeMap::new(),
            frame_seq: BTreeMap::new(),
            layout: None,
            instructions: Vec::new(),
            order: None,
            orders_issued: 0,
            recipients: Vec::new(),
            uploads: BTreeMap::new(),
            summary: None,
        }
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn group_id(&self) -> &GroupId {
        &self.group_id
    }

    pub fn host(&self) -> &DeviceId {
        &self.host
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn created_at_ms(&self) -> u64 {
        self.created_at_ms
    }

    /// Members in join order.
    pub fn members(&self) -> &[DeviceId] {
        &self.members
    }

    pub fn is_member(&self, device: &DeviceId) -> bool {
        self.colors.contains_key(device)
    }

    pub fn color(&self, device: &DeviceId) -> Option<u8> {
        self.colors.get(device).copied()
    }

    /// A session of one still works; clients should warn that there is
    /// nothing to stitch.
    pub fn single_member_warning(&self) -> bool {
        self.members.len() == 1
    }

    /// Members currently taking part in the preview.
    pub fn active_members(&self) -> Vec<DeviceId> {
        self.members.iter().filter(|d| !self.silent.contains(*d)).cloned().collect()
    }

    pub fn silent_members(&self) -> &BTreeSet<DeviceId> {
        &self.silent
    }

    pub fn latest_frames(&self) -> &BTreeMap<DeviceId, Frame> {
        &self.latest_frames
    }

    pub fn layout(&self) -> Option<&PanoramaLayout> {
        self.layout.as_ref()
    }

    pub fn set_layout(&mut self, layout: PanoramaLayout) {
        self.layout = Some(layout);
    }

    pub fn order(&self) -> Option<&CaptureOrder> {
        self.order.as_ref()
    }

    pub fn recipients(&self) -> &[DeviceId] {
        &self.recipients
    }

    pub fn uploads(&self) -> &BTreeMap<DeviceId, Upload> {
        &self.uploads
    }

    pub fn summary(&self) -> Option<&SessionSummary> {
        self.summary.as_ref()
    }

    fn advance(&mut self, to: Phase) {
        debug_assert!(to >= self.phase, "phase went backwards: {} -> {to}", self.phase);
        self.phase = to;
    }

    fn member_check(&self, device: &DeviceId) -> Result<(), ProtocolError> {
        if self.is_member(device) {
            Ok(())
        } else {
            Err(ProtocolError::NotMember(device.clone()))
        }
    }

    /// Any sign of life from a member. A silent member that speaks again
    /// rejoins the preview.
    pub fn heartbeat(&mut self, device: &DeviceId, now_ms: u64) {
        if let Some(seen) = self.last_seen.get_mut(device) {
            *seen = (*seen).max(now_ms);
            self.silent.remove(device);
        }
    }

    /// Keeps only the newest viewfinder frame per device. Frames are taken
    /// during preview and countdown.
    pub fn ingest_viewfinder_frame(&mut self, frame: Frame, now_ms: u64) -> Result<Ingest, ProtocolError> {
        self.member_check(&frame.device_id)?;
        self.heartbeat(&frame.device_id, now_ms);
        if !matches!(self.phase, Phase::CapturingPreview | Phase::Countdown) {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        if self.frame_seq.get(&frame.device_id).is_some_and(|&seen| seen >= frame.seq) {
            return Ok(Ingest::Stale);
        }
        self.frame_seq.insert(frame.device_id.clone(), frame.seq);
        self.latest_frames.insert(frame.device_id.clone(), frame);
        Ok(Ingest::Stored)
    }

    /// Queues an arrow for `target`. Repeated swipes queue repeated arrows.
    pub fn route_instruction(
        &mut self,
        from: &DeviceId,
        target: &DeviceId,
        direction: (f64, f64),
        now_ms: u64,
    ) -> Result<Instruction, ProtocolError> {
        self.member_check(from)?;
        if from != &self.host {
            return Err(ProtocolError::NotHost(from.clone()));
        }
        self.member_check(target)?;
        if self.phase != Phase::CapturingPreview {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        let (dx, dy) = direction;
        let norm = dx.hypot(dy);
        if !norm.is_finite() || norm == 0.0 {
            return Err(ProtocolError::InvalidDirection);
        }
        let ins = Instruction {
            from: from.clone(),
            target: target.clone(),
            dx: dx / norm,
            dy: dy / norm,
            issued_at_ms: now_ms,
            expires_at_ms: now_ms + ARROW_LIFESPAN_MS,
        };
        self.instructions.push(ins.clone());
        Ok(ins)
    }

    /// Arrows still on screen at `now_ms`; expired ones are dropped.
    pub fn live_instructions(&mut self, now_ms: u64) -> Vec<Instruction> {
        self.instructions.retain(|i| i.expires_at_ms > now_ms);
        self.instructions.clone()
    }

    /// Members that would be missing from the panorama right now.
    pub fn unplaced_members(&self) -> Vec<DeviceId> {
        self.members
            .iter()
            .filter(|d| self.silent.contains(*d) || !self.layout.as_ref().is_some_and(|l| l.is_placed(d)))
            .cloned()
            .collect()
    }

    /// Sends one identical order to every reachable member, host included.
    ///
    /// Refuses while members are unplaced unless `allow_unplaced` is set.
    /// If any recipient cannot be reserved nothing is sent and the phase is
    /// unchanged.
    pub fn trigger_capture<F: CaptureFanout>(
        &mut self,
        requester: &DeviceId,
        allow_unplaced: bool,
        now_ms: u64,
        fanout: &mut F,
    ) -> Result<CaptureOrder, ProtocolError> {
        self.member_check(requester)?;
        if requester != &self.host {
            return Err(ProtocolError::NotHost(requester.clone()));
        }
        if self.phase != Phase::CapturingPreview {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        let unplaced = self.unplaced_members();
        if !unplaced.is_empty() && !allow_unplaced {
            return Err(ProtocolError::UnplacedMembers(unplaced));
        }
        let recipients = self.active_members();
        let mut permits = Vec::with_capacity(recipients.len());
        for d in &recipients {
            match fanout.reserve(d) {
                Some(p) => permits.push(p),
                None => return Err(ProtocolError::SendFailed(d.clone())),
            }
        }

        self.orders_issued += 1;
        let order = CaptureOrder {
            session_id: self.session_id.clone(),
            order_id: OrderId::new(format!("{}-{}", self.session_id, self.orders_issued)),
            countdown_ms: CAPTURE_COUNTDOWN_MS,
            issued_at_ms: now_ms,
        };
        self.advance(Phase::Countdown);
        for (d, p) in recipients.iter().zip(permits) {
            fanout.deliver(d, p, &order);
        }
        self.instructions.clear();
        self.latest_frames.clear();
        self.recipients = recipients;
        self.order = Some(order.clone());
        Ok(order)
    }

    /// Moves countdown to collecting once the countdown has elapsed, and
    /// reports whether collection has run out of time.
    pub fn poll_clock(&mut self, now_ms: u64) -> bool {
        let Some(order) = &self.order else { return false };
        let issued = order.issued_at_ms;
        if self.phase == Phase::Countdown && now_ms >= issued + order.countdown_ms {
            self.advance(Phase::Collecting);
        }
        self.phase == Phase::Collecting && now_ms >= issued + COLLECT_TIMEOUT_MS
    }

    /// Accepts one full-resolution capture.
    pub fn collect_capture(
        &mut self,
        device: &DeviceId,
        order_id: &OrderId,
        capture_timestamp_ms: u64,
        data: FrameData,
        now_ms: u64,
    ) -> Result<CollectStatus, ProtocolError> {
        self.member_check(device)?;
        self.heartbeat(device, now_ms);
        let current = self.order.as_ref().map(|o| &o.order_id);
        if !matches!(self.phase, Phase::Countdown | Phase::Collecting | Phase::Complete) {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        if current != Some(order_id) {
            return Err(ProtocolError::OrderMismatch { expected: current.cloned(), got: order_id.clone() });
        }
        if !self.recipients.contains(device) {
            return Err(ProtocolError::NotMember(device.clone()));
        }
        if let Some(held) = self.uploads.get(device) {
            return if held.data == data && held.capture_timestamp_ms == capture_timestamp_ms {
                Ok(CollectStatus::Duplicate)
            } else {
                Err(ProtocolError::DuplicateUpload(device.clone()))
            };
        }
        if self.phase == Phase::Complete {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        self.advance(Phase::Collecting);
        self.uploads.insert(
            device.clone(),
            Upload { device_id: device.clone(), capture_timestamp_ms, received_at_ms: now_ms, data },
        );
        let received = self.uploads.len();
        let expected = self.recipients.len();
        Ok(if received == expected { CollectStatus::Ready } else { CollectStatus::Progress { received, expected } })
    }

    /// Closes collection with whatever has arrived.
    pub fn finalize(&mut self, now_ms: u64) -> Result<SessionSummary, ProtocolError> {
        if !matches!(self.phase, Phase::Countdown | Phase::Collecting) {
            return Err(ProtocolError::WrongPhase(self.phase));
        }
        let order = self.order.as_ref().expect("collection implies an order");
        let received: Vec<DeviceId> = self.uploads.keys().cloned().collect();
        let missing: Vec<DeviceId> = self.recipients.iter().filter(|d| !self.uploads.contains_key(*d)).cloned().collect();
        let stamps = self.uploads.values().map(|u| u.capture_timestamp_ms);
        let skew_ms = match (stamps.clone().min(), stamps.max()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0,
        };
        let summary = SessionSummary {
            session_id: self.session_id.clone(),
            order_id: order.order_id.clone(),
            host: self.host.clone(),
            members: self.members.clone(),
            partial: !missing.is_empty(),
            received,
            missing,
            skew_ms,
            completed_at_ms: now_ms,
        };
        self.advance(Phase::Complete);
        self.summary = Some(summary.clone());
        Ok(summary)
    }

    /// Ends the session without a result. No-op once terminal.
    pub fn abort(&mut self) {
        if !self.phase.is_terminal() {
            self.advance(Phase::Aborted);
        }
    }

    /// A member's connection closed. Losing the host aborts the session.
    pub fn disconnect(&mut self, device: &DeviceId) -> Liveness {
        let mut out = Liveness::default();
        if !self.is_member(device) || self.phase.is_terminal() {
            return out;
        }
        if device == &self.host {
            self.abort();
            out.aborted = true;
        } else if self.silent.insert(device.clone()) {
            self.latest_frames.remove(device);
            out.newly_silent.push(device.clone());
        }
        out
    }

    /// Marks members silent after [`SILENCE_TIMEOUT_MS`] without contact
    /// during the preview. Losing the host this way aborts the session.
    pub fn check_liveness(&mut self, now_ms: u64) -> Liveness {
        let mut out = Liveness::default();
        if self.phase != Phase::CapturingPreview {
            return out;
        }
        for d in self.members.clone() {
            if self.silent.contains(&d) || now_ms.saturating_sub(self.last_seen[&d]) <= SILENCE_TIMEOUT_MS {
                continue;
            }
            let l = self.disconnect(&d);
            out.aborted |= l.aborted;
            out.newly_silent.extend(l.newly_silent);
            if out.aborted {
                break;
            }
        }
        out
    }
}

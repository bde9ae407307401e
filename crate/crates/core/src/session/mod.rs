//! The authoritative, transport-independent session state machine.
//!
//! [`Registry`] owns devices and groups: registration, merging groups by
//! token, and the single-host rule. Starting a session snapshots a group into
//! a [`SessionState`], which then owns the capture lifecycle:
//!
//! ```text
//! forming -> capturing-preview -> countdown -> collecting -> complete
//!                         \______________\___________\______> aborted
//! ```
//!
//! Every mutation takes the current time in milliseconds explicitly, so the
//! machine is deterministic under test and can run on a simulated clock.

mod registry;
mod state;

use thiserror::Error;

use crate::ids::{DeviceId, GroupId, OrderId, SessionId};

pub use registry::{DeviceRecord, Registry};
pub use state::{
    CaptureFanout, CaptureOrder, CollectStatus, Frame, FrameData, Ingest, Instruction, Liveness, Phase, RecordingFanout,
    SessionState, SessionSummary, Upload,
};

/// Number of distinguishable member colours, and therefore the group cap.
pub const PALETTE_SIZE: u8 = 8;
pub const MAX_GROUP_SIZE: usize = PALETTE_SIZE as usize;
/// How long a host's arrow stays on the target's screen.
pub const ARROW_LIFESPAN_MS: u64 = 1_500;
/// Delay between receiving a capture order and taking the picture.
pub const CAPTURE_COUNTDOWN_MS: u64 = 3_000;
/// Uploads still missing this long after the order are given up on.
pub const COLLECT_TIMEOUT_MS: u64 = 30_000;
/// Members silent for longer than this drop out of the preview.
pub const SILENCE_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("group {0} already has {MAX_GROUP_SIZE} members")]
    GroupFull(GroupId),
    #[error("group {0} is already capturing")]
    SessionLocked(GroupId),
    #[error("{0} is not the host")]
    NotHost(DeviceId),
    #[error("group {0} already has a session in progress")]
    AlreadyInSession(GroupId),
    #[error("{0} is not a member of this session")]
    NotMember(DeviceId),
    #[error("operation not allowed in phase {0}")]
    WrongPhase(Phase),
    #[error("members not placed in the layout: {0:?}")]
    UnplacedMembers(Vec<DeviceId>),
    #[error("a different upload from {0} was already received")]
    DuplicateUpload(DeviceId),
    #[error("upload refers to order {got}, current order is {expected:?}")]
    OrderMismatch { expected: Option<OrderId>, got: OrderId },
    #[error("instruction direction must be a non-zero finite vector")]
    InvalidDirection,
    #[error("capture order could not be delivered to {0}")]
    SendFailed(DeviceId),
}

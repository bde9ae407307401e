//! The message schema spoken between clients and the server.
//!
//! Every message is one UTF-8 JSON object, framed on the socket by a 4-byte
//! big-endian length prefix:
//!
//! ```json
//! {"kind": "frame", "device_id": "d…", "seq": 7, "sent_at_ms": 1712, "payload": {…}}
//! ```
//!
//! `session_id`, `device_id` and `seq` are omitted when they do not apply.
//! Raster payloads are base64 strings: viewfinder frames and previews are
//! JPEG, captures and results PNG.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use bytes::Bytes;
use copano_core::ids::{DeviceId, GroupId, OrderId, SessionId};
use copano_core::session::ProtocolError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Largest accepted message, prefix excluded.
pub const MAX_MESSAGE_BYTES: usize = 64 << 20;

/// JPEG quality of viewfinder frames.
pub const FRAME_JPEG_QUALITY: u8 = 60;
/// JPEG quality of broadcast previews.
pub const PREVIEW_JPEG_QUALITY: u8 = 70;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Register,
    Join,
    Start,
    Frame,
    Preview,
    Instruct,
    Arrow,
    CaptureOrder,
    CaptureUpload,
    ResultReady,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Register,
        Kind::Join,
        Kind::Start,
        Kind::Frame,
        Kind::Preview,
        Kind::Instruct,
        Kind::Arrow,
        Kind::CaptureOrder,
        Kind::CaptureUpload,
        Kind::ResultReady,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Register => "register",
            Kind::Join => "join",
            Kind::Start => "start",
            Kind::Frame => "frame",
            Kind::Preview => "preview",
            Kind::Instruct => "instruct",
            Kind::Arrow => "arrow",
            Kind::CaptureOrder => "capture_order",
            Kind::CaptureUpload => "capture_upload",
            Kind::ResultReady => "result_ready",
            Kind::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("message is not UTF-8")]
    Utf8,
    #[error("connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad base64 payload: {0}")]
    Base64(#[from] base64::DecodeError),
}

/// One message. `kind` stays a string so unknown kinds can be reported
/// without dropping the connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<DeviceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub sent_at_ms: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new<P: Serialize>(kind: Kind, sent_at_ms: u64, payload: &P) -> Self {
        Self {
            kind: kind.as_str().to_owned(),
            session_id: None,
            device_id: None,
            seq: None,
            sent_at_ms,
            payload: serde_json::to_value(payload).expect("payload types serialize"),
        }
    }

    pub fn with_session(mut self, id: &SessionId) -> Self {
        self.session_id = Some(id.clone());
        self
    }

    pub fn with_device(mut self, id: &DeviceId) -> Self {
        self.device_id = Some(id.clone());
        self
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn kind(&self) -> Option<Kind> {
        Kind::parse(&self.kind)
    }

    pub fn payload<P: DeserializeOwned>(&self) -> Result<P, WireError> {
        Ok(P::deserialize(&self.payload)?)
    }

    pub fn to_bytes(&self) -> Bytes {
        Bytes::from(serde_json::to_vec(self).expect("envelopes serialize"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let text = std::str::from_utf8(bytes).map_err(|_| WireError::Utf8)?;
        Ok(serde_json::from_str(text)?)
    }
}

pub fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, WireError> {
    Ok(B64.decode(text)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Empty {}

/// Reply to `register`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registered {
    pub device_id: DeviceId,
    pub group_id: GroupId,
    pub display_color: u8,
    pub is_host: bool,
}

/// Client `join` request: the token read off another member's screen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub group_id: GroupId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub device_id: DeviceId,
    pub display_color: u8,
    pub is_host: bool,
}

/// Server `join` message: the current roster, sent to every member of a
/// group whenever it changes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupUpdate {
    pub group_id: GroupId,
    pub members: Vec<MemberInfo>,
}

/// Server `start` message, sent to every member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStarted {
    pub session_id: SessionId,
    pub group_id: GroupId,
    pub host: DeviceId,
    /// Join order.
    pub members: Vec<MemberInfo>,
    pub single_member_warning: bool,
}

/// Client `frame`: one downsized viewfinder image. The sequence number is
/// the envelope's `seq`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePayload {
    pub width: u32,
    pub height: u32,
    pub jpeg: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadInfo {
    pub device_id: DeviceId,
    pub color: u8,
    /// Sequence number of the frame this quad was computed from.
    pub seq: u64,
    /// Corners in preview pixel coordinates: top-left, top-right,
    /// bottom-right, bottom-left of the device frame.
    pub corners: [[f64; 2]; 4],
}

/// Server `preview`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewPayload {
    pub tick: u64,
    pub width: u32,
    pub height: u32,
    pub jpeg: String,
    pub anchor: Option<DeviceId>,
    pub quads: Vec<QuadInfo>,
    pub unplaced: Vec<DeviceId>,
}

/// Client `instruct`: the host's swipe on a member's tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructPayload {
    pub target: DeviceId,
    pub dx: f64,
    pub dy: f64,
}

/// Server `arrow`, sent to the instruction's target. The direction is a
/// unit vector in screen coordinates (y down).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrowPayload {
    pub from: DeviceId,
    pub dx: f64,
    pub dy: f64,
    pub issued_at_ms: u64,
    pub expires_at_ms: u64,
}

/// Client `capture_order`: the host asks for the shot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRequest {
    /// Capture even though some members are missing from the layout.
    #[serde(default)]
    pub allow_unplaced: bool,
}

/// Server `capture_order`, identical for every member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureOrderPayload {
    pub order_id: OrderId,
    pub countdown_ms: u64,
    pub issued_at_ms: u64,
}

/// Client `capture_upload`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureUpload {
    pub order_id: OrderId,
    pub capture_timestamp_ms: u64,
    pub png: String,
}

/// Server `result_ready`, sent to the members that received the order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultReady {
    pub session_id: SessionId,
    /// Path of the panorama on the server's HTTP side.
    pub url: String,
    pub partial: bool,
    pub skew_ms: u64,
    pub members: Vec<DeviceId>,
    pub placed: Vec<DeviceId>,
    pub width: u32,
    pub height: u32,
}

/// Server `capture_upload` acknowledgement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadAck {
    pub order_id: OrderId,
    pub received: usize,
    pub expected: usize,
    pub duplicate: bool,
}

/// Server `error`. The connection stays open.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<String>,
}

impl ErrorPayload {
    pub fn new(code: &str, message: impl Into<String>, in_reply_to: Option<&str>) -> Self {
        Self { code: code.to_owned(), message: message.into(), in_reply_to: in_reply_to.map(str::to_owned) }
    }
}

/// Stable error code for a protocol rejection.
pub fn error_code(e: &ProtocolError) -> &'static str {
    match e {
        ProtocolError::UnknownDevice(_) => "unknown_device",
        ProtocolError::UnknownGroup(_) => "unknown_group",
        ProtocolError::UnknownSession(_) => "unknown_session",
        ProtocolError::GroupFull(_) => "group_full",
        ProtocolError::SessionLocked(_) => "session_locked",
        ProtocolError::NotHost(_) => "not_host",
        ProtocolError::AlreadyInSession(_) => "already_in_session",
        ProtocolError::NotMember(_) => "not_member",
        ProtocolError::WrongPhase(_) => "wrong_phase",
        ProtocolError::UnplacedMembers(_) => "unplaced_members",
        ProtocolError::DuplicateUpload(_) => "duplicate_upload",
        ProtocolError::OrderMismatch { .. } => "order_mismatch",
        ProtocolError::InvalidDirection => "invalid_direction",
        ProtocolError::SendFailed(_) => "send_failed",
    }
}

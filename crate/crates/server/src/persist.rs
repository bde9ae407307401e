//! On-disk session artifacts:
//! `sessions/<id>/capture_<device>.png`, `panorama.png` and `session.meta`.

use std::io;
use std::path::{Path, PathBuf};

use copano_core::ids::SessionId;
use serde::{Deserialize, Serialize};

pub const PANORAMA_FILE: &str = "panorama.png";
pub const META_FILE: &str = "session.meta";

pub fn session_dir(data_dir: &Path, id: &SessionId) -> PathBuf {
    data_dir.join("sessions").join(id.as_str())
}

pub fn capture_file(device: &str) -> String {
    format!("capture_{device}.png")
}

/// Contents of `session.meta`, a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub group_id: String,
    pub host: String,
    pub order_id: String,
    pub partial: bool,
    /// Spread of client-reported capture timestamps.
    pub skew_ms: u64,
    pub created_at_ms: u64,
    pub order_issued_at_ms: u64,
    pub completed_at_ms: u64,
    /// Join order.
    pub members: Vec<String>,
    /// Order recipients that never uploaded.
    pub missing: Vec<String>,
    /// Uploaded captures that could not be placed in the panorama.
    pub unplaced: Vec<String>,
    pub anchor: Option<String>,
    pub panorama_width: u32,
    pub panorama_height: u32,
    pub captures: Vec<CaptureMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub device_id: String,
    pub capture_timestamp_ms: u64,
    pub received_at_ms: u64,
    pub width: u32,
    pub height: u32,
    pub gain: Option<f64>,
    /// Row-major `[a11, a12, tx, a21, a22, ty]` into panorama pixels.
    pub placement: Option<[f64; 6]>,
}

impl SessionMeta {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("meta serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, dir.join(name))
}

//! Offline stitching of a set of image files, independent of the server.
//!
//! Images are registered on downscaled copies exactly as the server does
//! for a final render, then composited either like the live preview
//! (painter's order, no blending) or like the final panorama (gain
//! compensation and feathering). The report is plain line-oriented text
//! with fixed float formatting so it can be diffed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use copano_core::alignment::RegistrationParams;
use copano_core::compositing::{composite_preview, feather_blend_final, CompositeError};
use copano_core::imaging::{decode, CodecError};
use copano_core::pipeline::{final_layout, Anchor, FinalLayout};
use copano_core::{DeviceId, Image, PanoramaLayout, RegistrationEdge};

/// Longest side of the copies that get registered.
pub const REGISTER_MAX_DIM: u32 = 640;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Preview,
    Final,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Preview => "preview",
            Mode::Final => "final",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Options {
    pub mode: Mode,
    /// Index of the image whose frame the panorama is drawn in.
    pub anchor: usize,
    /// RANSAC seed.
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Self { mode: Mode::Final, anchor: 0, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StitchError {
    #[error("no input images")]
    NoImages,
    #[error("anchor index {anchor} out of range for {count} images")]
    AnchorOutOfRange { anchor: usize, count: usize },
    #[error("{}: {source}", path.display())]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Undecodable { path: PathBuf, source: CodecError },
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

/// An input image and the name it is reported under.
#[derive(Clone, Debug)]
pub struct Input {
    pub name: String,
    pub image: Image,
}

pub fn load_inputs(paths: &[PathBuf]) -> Result<Vec<Input>, StitchError> {
    paths
        .iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|source| StitchError::Unreadable { path: path.clone(), source })?;
            let image = decode(&bytes).map_err(|source| StitchError::Undecodable { path: path.clone(), source })?;
            Ok(Input { name: display_name(path), image })
        })
        .collect()
}

fn display_name(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub panorama: Image,
    /// Layout in the anchor's full-resolution pixel frame. Device ids are
    /// the zero-padded input indices.
    pub layout: PanoramaLayout,
    pub edges: Vec<RegistrationEdge>,
    pub report: String,
}

impl Outcome {
    /// Input indices that could not be placed.
    pub fn unplaced(&self) -> Vec<usize> {
        self.layout.unplaced.iter().map(index_of).collect()
    }

    pub fn all_placed(&self) -> bool {
        self.layout.unplaced.is_empty()
    }
}

fn device(i: usize) -> DeviceId {
    DeviceId::new(format!("{i:04}"))
}

fn index_of(d: &DeviceId) -> usize {
    d.as_str().parse().expect("stitch device ids are indices")
}

pub fn stitch(inputs: &[Input], opts: &Options) -> Result<Outcome, StitchError> {
    if inputs.is_empty() {
        return Err(StitchError::NoImages);
    }
    if opts.anchor >= inputs.len() {
        return Err(StitchError::AnchorOutOfRange { anchor: opts.anchor, count: inputs.len() });
    }
    let frames: Vec<(DeviceId, Image)> = inputs.iter().enumerate().map(|(i, inp)| (device(i), inp.image.clone())).collect();
    let mut params = RegistrationParams::default();
    params.ransac.seed = opts.seed;
    let anchor = device(opts.anchor);
    let FinalLayout { layout, gains, edges } =
        final_layout(&frames, Anchor::Fixed(&anchor), &params, REGISTER_MAX_DIM).expect("anchor is one of the frames");

    let panorama = match opts.mode {
        Mode::Preview => composite_preview(&frames, &layout).panorama,
        Mode::Final => {
            let placed: BTreeMap<DeviceId, Image> = frames.iter().filter(|(d, _)| layout.is_placed(d)).cloned().collect();
            feather_blend_final(&placed, &layout, &gains)?
        }
    };
    let report = report(inputs, opts, &layout, &edges, &panorama);
    Ok(Outcome { panorama, layout, edges, report })
}

fn report(inputs: &[Input], opts: &Options, layout: &PanoramaLayout, edges: &[RegistrationEdge], pano: &Image) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode {}", opts.mode.name());
    let _ = writeln!(out, "seed {}", opts.seed);
    let _ = writeln!(out, "anchor {} {}", opts.anchor, inputs[opts.anchor].name);
    for (i, inp) in inputs.iter().enumerate() {
        let (w, h) = inp.image.dimensions();
        match layout.placements.get(&device(i)) {
            Some(t) => {
                let p = t.params().map(|v| format!("{v:.4}")).join(" ");
                let _ = writeln!(out, "image {i} {w}x{h} placed {p} {}", inp.name);
            }
            None => {
                let _ = writeln!(out, "image {i} {w}x{h} unplaced {}", inp.name);
            }
        }
    }
    let mut sorted: Vec<&RegistrationEdge> = edges.iter().collect();
    sorted.sort_by_key(|e| (index_of(&e.device_a), index_of(&e.device_b)));
    for e in sorted {
        let in_tree = layout.tree.iter().any(|t| t.device_a == e.device_a && t.device_b == e.device_b);
        let _ = writeln!(
            out,
            "edge {} {} inliers {} rms {:.4}{}",
            index_of(&e.device_a),
            index_of(&e.device_b),
            e.inlier_count,
            e.rms_error,
            if in_tree { " tree" } else { "" }
        );
    }
    let b = layout.bounds;
    let _ = writeln!(out, "bounds {} {} {} {}", b.x, b.y, b.width, b.height);
    let _ = writeln!(out, "panorama {}x{}", pano.width(), pano.height());
    let unplaced: Vec<String> = layout.unplaced.iter().map(|d| index_of(d).to_string()).collect();
    let _ = writeln!(out, "unplaced {}", if unplaced.is_empty() { "none".to_string() } else { unplaced.join(" ") });
    out
}

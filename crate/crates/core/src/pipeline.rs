//! The whole stitching pipeline: frames in, layout and panoramas out.
//!
//! [`stitch_layout`] registers every pair of frames from scratch;
//! [`IncrementalStitcher`] keeps features and edges between preview ticks
//! and only redoes the work a changed frame invalidates; [`render_final`]
//! produces the gain-compensated, feathered panorama from full-resolution
//! captures.

use std::collections::{BTreeMap, BTreeSet};

use crate::alignment::{choose_anchor, pairwise_register, solve_layout, FrameFeatures, RegistrationParams};
use crate::compositing::{
    composite_preview, estimate_gains, feather_blend_final, CompositeError, CompositeResult, PREVIEW_PANORAMA_MAX_DIM,
};
use crate::imaging::{downscale_to_max_dim, Image, PREVIEW_MAX_DIM};
use crate::session::FrameData;
use crate::{DeviceId, PanoramaLayout, RegistrationEdge};

/// Registers every unordered pair of frames once.
pub fn register_all(frames: &[FrameFeatures], params: &RegistrationParams) -> Vec<RegistrationEdge> {
    let mut edges = Vec::new();
    for (i, a) in frames.iter().enumerate() {
        for b in &frames[i + 1..] {
            edges.extend(pairwise_register(a, b, params));
        }
    }
    edges
}

#[derive(Clone, Debug)]
pub struct Stitched {
    pub layout: PanoramaLayout,
    pub edges: Vec<RegistrationEdge>,
}

/// Extracts features, registers all pairs and solves the layout, anchored
/// per [`choose_anchor`]. `None` for an empty frame list.
pub fn stitch_layout(frames: &[(DeviceId, Image)], host: Option<&DeviceId>, params: &RegistrationParams) -> Option<Stitched> {
    stitch_layout_anchored(frames, Anchor::Prefer(host), params)
}

/// Which device anchors a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor<'a> {
    /// Per [`choose_anchor`]: the host when it registered with anyone.
    Prefer(Option<&'a DeviceId>),
    /// Exactly this device, even when nothing registers with it.
    Fixed(&'a DeviceId),
}

/// Like [`stitch_layout`] with an explicit anchor policy. `None` for an
/// empty frame list or a fixed anchor that is not among `frames`.
pub fn stitch_layout_anchored(frames: &[(DeviceId, Image)], anchor: Anchor, params: &RegistrationParams) -> Option<Stitched> {
    let features: Vec<FrameFeatures> = frames.iter().map(|(d, img)| FrameFeatures::extract(d.clone(), img, params)).collect();
    let edges = register_all(&features, params);
    let devices: BTreeSet<DeviceId> = frames.iter().map(|(d, _)| d.clone()).collect();
    let anchor = match anchor {
        Anchor::Prefer(host) => choose_anchor(&edges, &devices, host)?,
        Anchor::Fixed(d) => devices.get(d)?.clone(),
    };
    let sizes = frames.iter().map(|(d, img)| (d.clone(), img.dimensions())).collect();
    Some(Stitched { layout: solve_layout(&edges, &sizes, &anchor), edges })
}

/// Layout and gains for a final render, before blending.
#[derive(Clone, Debug)]
pub struct FinalLayout {
    /// Layout at capture resolution; the anchor's placement is the identity.
    pub layout: PanoramaLayout,
    pub gains: BTreeMap<DeviceId, f64>,
    pub edges: Vec<RegistrationEdge>,
}

/// Registers full-resolution captures on copies downscaled to
/// `register_max_dim`, as the preview does, then scales the layout back up
/// so the anchor keeps its native resolution. Gains are estimated on the
/// small copies.
pub fn final_layout(
    captures: &[(DeviceId, Image)],
    anchor: Anchor,
    params: &RegistrationParams,
    register_max_dim: u32,
) -> Option<FinalLayout> {
    let small: Vec<(DeviceId, Image)> =
        captures.iter().map(|(d, img)| (d.clone(), downscale_to_max_dim(img, register_max_dim))).collect();
    let Stitched { layout, edges } = stitch_layout_anchored(&small, anchor, params)?;
    let small_map: BTreeMap<DeviceId, Image> = small.into_iter().filter(|(d, _)| layout.is_placed(d)).collect();
    let gains = estimate_gains(&small_map, &layout);

    let full: BTreeMap<&DeviceId, &Image> = captures.iter().filter(|(d, _)| layout.is_placed(d)).map(|(d, i)| (d, i)).collect();
    let input_scale: BTreeMap<DeviceId, f64> =
        full.iter().map(|(d, img)| ((*d).clone(), small_map[*d].width() as f64 / img.width() as f64)).collect();
    let sizes: BTreeMap<DeviceId, (u32, u32)> = full.iter().map(|(d, img)| ((*d).clone(), img.dimensions())).collect();
    let layout = layout.rescaled(&input_scale, 1.0 / input_scale[&layout.anchor], &sizes);
    Some(FinalLayout { layout, gains, edges })
}

#[derive(Clone, Debug)]
pub struct FinalRender {
    pub panorama: Image,
    /// Layout at capture resolution; the anchor's placement is the identity.
    pub layout: PanoramaLayout,
    pub gains: BTreeMap<DeviceId, f64>,
    pub edges: Vec<RegistrationEdge>,
}

/// Renders the final panorama from full-resolution captures: [`final_layout`]
/// anchored per [`choose_anchor`], then a gain-compensated feathered blend
/// at full resolution.
pub fn render_final(
    captures: &[(DeviceId, Image)],
    host: Option<&DeviceId>,
    params: &RegistrationParams,
    register_max_dim: u32,
) -> Result<Option<FinalRender>, CompositeError> {
    render_final_anchored(captures, Anchor::Prefer(host), params, register_max_dim)
}

pub fn render_final_anchored(
    captures: &[(DeviceId, Image)],
    anchor: Anchor,
    params: &RegistrationParams,
    register_max_dim: u32,
) -> Result<Option<FinalRender>, CompositeError> {
    let Some(FinalLayout { layout, gains, edges }) = final_layout(captures, anchor, params, register_max_dim) else {
        return Ok(None);
    };
    let full: BTreeMap<DeviceId, Image> =
        captures.iter().filter(|(d, _)| layout.is_placed(d)).map(|(d, img)| (d.clone(), img.clone())).collect();
    let panorama = feather_blend_final(&full, &layout, &gains)?;
    Ok(Some(FinalRender { panorama, layout, gains, edges }))
}

struct Cached {
    seq: u64,
    image: Image,
    features: FrameFeatures,
}

/// What one [`IncrementalStitcher::update`] call did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StitchStats {
    /// Frames whose sequence number changed and were re-described.
    pub changed: usize,
    /// Pairwise registrations attempted.
    pub registrations: usize,
    /// Frames that could not be decoded and were skipped.
    pub undecodable: Vec<DeviceId>,
}

/// Preview stitching state carried between ticks.
///
/// Features are recomputed only for frames whose sequence number changed.
/// A changed frame is re-registered against its spanning-tree neighbours
/// and the anchor when it was placed, and against everyone otherwise;
/// edges of unchanged pairs are reused.
pub struct IncrementalStitcher {
    params: RegistrationParams,
    max_dim: u32,
    cache: BTreeMap<DeviceId, Cached>,
    edges: BTreeMap<(DeviceId, DeviceId), RegistrationEdge>,
    layout: Option<PanoramaLayout>,
}

impl IncrementalStitcher {
    pub fn new(params: RegistrationParams, max_dim: u32) -> Self {
        Self { params, max_dim, cache: BTreeMap::new(), edges: BTreeMap::new(), layout: None }
    }

    pub fn layout(&self) -> Option<&PanoramaLayout> {
        self.layout.as_ref()
    }

    fn pair(a: &DeviceId, b: &DeviceId) -> (DeviceId, DeviceId) {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    /// Brings the layout up to date with the newest frame of each device.
    /// Devices not listed are forgotten.
    pub fn update(&mut self, frames: &[(DeviceId, u64, FrameData)], host: &DeviceId) -> StitchStats {
        let mut stats = StitchStats::default();
        let present: BTreeSet<&DeviceId> = frames.iter().map(|(d, _, _)| d).collect();
        self.cache.retain(|d, _| present.contains(d));
        self.edges.retain(|(a, b), _| present.contains(a) && present.contains(b));

        let mut changed = Vec::new();
        for (d, seq, data) in frames {
            if self.cache.get(d).is_some_and(|c| c.seq == *seq) {
                continue;
            }
            match data.decode() {
                Ok(img) => {
                    let image = downscale_to_max_dim(&img, self.max_dim);
                    let features = FrameFeatures::extract(d.clone(), &image, &self.params);
                    self.cache.insert(d.clone(), Cached { seq: *seq, image, features });
                    changed.push(d.clone());
                }
                Err(_) => stats.undecodable.push(d.clone()),
            }
        }
        stats.changed = changed.len();

        let mut done = BTreeSet::new();
        for d in &changed {
            self.edges.retain(|(a, b), _| a != d && b != d);
        }
        for d in &changed {
            let partners: BTreeSet<DeviceId> = match &self.layout {
                Some(l) if l.is_placed(d) => l
                    .tree
                    .iter()
                    .filter_map(|e| {
                        if &e.device_a == d {
                            Some(e.device_b.clone())
                        } else if &e.device_b == d {
                            Some(e.device_a.clone())
                        } else {
                            None
                        }
                    })
                    .chain([l.anchor.clone()])
                    .collect(),
                _ => self.cache.keys().cloned().collect(),
            };
            for p in partners {
                if &p == d || !self.cache.contains_key(&p) || !done.insert(Self::pair(d, &p)) {
                    continue;
                }
                stats.registrations += 1;
                if let Some(e) = pairwise_register(&self.cache[d].features, &self.cache[&p].features, &self.params) {
                    self.edges.insert(Self::pair(d, &p), e);
                }
            }
        }

        let devices: BTreeSet<DeviceId> = self.cache.keys().cloned().collect();
        let edges: Vec<RegistrationEdge> = self.edges.values().cloned().collect();
        self.layout = choose_anchor(&edges, &devices, Some(host)).map(|anchor| {
            let sizes = self.cache.iter().map(|(d, c)| (d.clone(), c.image.dimensions())).collect();
            solve_layout(&edges, &sizes, &anchor)
        });
        stats
    }

    /// Paints the current layout with frames in `order` (join order), shrunk
    /// to the broadcast size cap.
    pub fn composite(&self, order: &[DeviceId]) -> CompositeResult {
        let Some(layout) = &self.layout else {
            return composite_preview(&[], &PanoramaLayout::empty(DeviceId::from(""), []));
        };
        let frames: Vec<(DeviceId, Image)> = order
            .iter()
            .filter_map(|d| self.cache.get(d).map(|c| (d.clone(), c.image.clone())))
            .collect();
        composite_preview(&frames, layout).fit_within(PREVIEW_PANORAMA_MAX_DIM)
    }
}

impl Default for IncrementalStitcher {
    fn default() -> Self {
        Self::new(RegistrationParams::default(), PREVIEW_MAX_DIM)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::procedural;

    fn views(offsets: &[(u32, u32)]) -> Vec<(DeviceId, Image)> {
        let scene = procedural(1400, 600, 3);
        offsets
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (DeviceId::new(format!("d{i}")), scene.crop(x, y, 300, 225)))
            .collect()
    }

    #[test]
    fn stitch_layout_places_a_row() {
        let frames = views(&[(100, 100), (340, 105), (580, 95)]);
        let s = stitch_layout(&frames, Some(&"d0".into()), &RegistrationParams::default()).unwrap();
        assert!(s.layout.unplaced.is_empty());
        let t = s.layout.placements[&DeviceId::from("d2")];
        assert!((t.tx - 480.0).abs() < 1.0 && (t.ty + 5.0).abs() < 1.0, "{t:?}");
    }

    #[test]
    fn incremental_reuses_unchanged_frames() {
        let frames = views(&[(100, 100), (340, 100), (580, 100)]);
        let input: Vec<(DeviceId, u64, FrameData)> =
            frames.iter().map(|(d, img)| (d.clone(), 1, FrameData::from(img.clone()))).collect();
        let mut st = IncrementalStitcher::default();
        let first = st.update(&input, &"d0".into());
        assert_eq!((first.changed, first.registrations), (3, 3));
        let again = st.update(&input, &"d0".into());
        assert_eq!((again.changed, again.registrations), (0, 0));
        assert!(st.layout().unwrap().unplaced.is_empty());

        // d2 moves a little: it is re-registered against its tree neighbour
        // and the anchor only.
        let moved = views(&[(100, 100), (340, 100), (590, 100)]);
        let mut input2 = input.clone();
        input2[2] = ("d2".into(), 2, FrameData::from(moved[2].1.clone()));
        let s = st.update(&input2, &"d0".into());
        assert_eq!(s.changed, 1);
        assert!(s.registrations <= 2);
        let t = st.layout().unwrap().placements[&DeviceId::from("d2")];
        assert!((t.tx - 490.0).abs() < 1.0, "{t:?}");

        let pano = st.composite(&["d0".into(), "d1".into(), "d2".into()]);
        assert_eq!(pano.device_quads.len(), 3);
    }

    #[test]
    fn final_render_keeps_anchor_resolution() {
        let scene = procedural(1600, 700, 8);
        let caps = vec![
            (DeviceId::from("a"), scene.crop(100, 100, 480, 360)),
            (DeviceId::from("b"), scene.crop(484, 100, 480, 360)),
        ];
        let r = render_final(&caps, Some(&"a".into()), &RegistrationParams::default(), 300).unwrap().unwrap();
        assert!(r.layout.placements[&DeviceId::from("a")].max_abs_diff(&crate::AffineTransform::IDENTITY) < 1e-9);
        let b = r.layout.bounds;
        assert!((b.width as i64 - 864).abs() <= 2 && (b.height as i64 - 360).abs() <= 2, "{b:?}");
        assert_eq!(r.panorama.dimensions(), (b.width, b.height));
    }
}

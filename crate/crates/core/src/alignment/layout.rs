use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{AffineTransform, Rect, RegistrationEdge};
use crate::DeviceId;

/// Placement of every registered device in the anchor's pixel frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanoramaLayout {
    pub anchor: DeviceId,
    /// Maps each placed device's pixel coordinates into panorama space.
    pub placements: BTreeMap<DeviceId, AffineTransform>,
    pub unplaced: BTreeSet<DeviceId>,
    /// Frame size of each placed device.
    pub sizes: BTreeMap<DeviceId, (u32, u32)>,
    /// Integer hull of all placed frame corners.
    pub bounds: Rect,
    /// Edges of the spanning tree the placements were chained along.
    pub tree: Vec<RegistrationEdge>,
}

impl PanoramaLayout {
    /// Layout with nothing placed; bounds are a single pixel at the origin.
    pub fn empty(anchor: DeviceId, devices: impl IntoIterator<Item = DeviceId>) -> Self {
        let mut unplaced: BTreeSet<DeviceId> = devices.into_iter().collect();
        unplaced.insert(anchor.clone());
        Self {
            anchor,
            placements: BTreeMap::new(),
            unplaced,
            sizes: BTreeMap::new(),
            bounds: Rect::new(0, 0, 1, 1),
            tree: Vec::new(),
        }
    }

    /// Layout from known placements, e.g. ground truth. Bounds are derived
    /// from the placed frames; there is no spanning tree.
    pub fn from_placements(
        anchor: DeviceId,
        placements: BTreeMap<DeviceId, AffineTransform>,
        sizes: BTreeMap<DeviceId, (u32, u32)>,
    ) -> Self {
        let bounds = hull_of(&placements, &sizes);
        let mut unplaced: BTreeSet<DeviceId> = sizes.keys().filter(|d| !placements.contains_key(*d)).cloned().collect();
        if !placements.contains_key(&anchor) {
            unplaced.insert(anchor.clone());
        }
        Self { anchor, placements, unplaced, sizes, bounds, tree: Vec::new() }
    }

    pub fn is_placed(&self, device: &DeviceId) -> bool {
        self.placements.contains_key(device)
    }

    /// Warped corners of a placed device's frame.
    pub fn quad(&self, device: &DeviceId) -> Option<[super::Point; 4]> {
        let t = self.placements.get(device)?;
        let (w, h) = self.sizes[device];
        Some(t.frame_corners(w, h))
    }

    /// Re-expresses the layout for frames of a different resolution.
    ///
    /// `input_scale[d]` is the factor that took device `d`'s new-resolution
    /// frame to the resolution the layout was solved at (e.g. preview width
    /// over capture width); panorama coordinates are multiplied by
    /// `output_scale`. `sizes` are the new frame sizes.
    pub fn rescaled(
        &self,
        input_scale: &BTreeMap<DeviceId, f64>,
        output_scale: f64,
        sizes: &BTreeMap<DeviceId, (u32, u32)>,
    ) -> PanoramaLayout {
        let out = AffineTransform::scaling(output_scale);
        let placements: BTreeMap<DeviceId, AffineTransform> = self
            .placements
            .iter()
            .map(|(d, t)| (d.clone(), out * *t * AffineTransform::scaling(input_scale[d])))
            .collect();
        let sizes: BTreeMap<DeviceId, (u32, u32)> =
            self.placements.keys().map(|d| (d.clone(), sizes[d])).collect();
        let bounds = hull_of(&placements, &sizes);
        PanoramaLayout { placements, sizes, bounds, ..self.clone() }
    }
}

fn hull_of(placements: &BTreeMap<DeviceId, AffineTransform>, sizes: &BTreeMap<DeviceId, (u32, u32)>) -> Rect {
    Rect::hull(placements.iter().flat_map(|(d, t)| {
        let (w, h) = sizes[d];
        t.frame_corners(w, h)
    }))
    .unwrap_or(Rect::new(0, 0, 1, 1))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Edge order for the maximum spanning forest: more inliers first, then
/// lower residual, then device ids.
fn edge_priority(a: &RegistrationEdge, b: &RegistrationEdge) -> std::cmp::Ordering {
    let key = |e: &RegistrationEdge| {
        let (lo, hi) = if e.device_a <= e.device_b { (&e.device_a, &e.device_b) } else { (&e.device_b, &e.device_a) };
        (lo.clone(), hi.clone())
    };
    b.inlier_count
        .cmp(&a.inlier_count)
        .then(a.rms_error.total_cmp(&b.rms_error))
        .then_with(|| key(a).cmp(&key(b)))
}

/// Chains pairwise edges into placements relative to `anchor`.
///
/// Builds a maximum-inlier spanning forest, then walks the anchor's tree:
/// each device's placement is its parent's placement composed with the edge
/// transform (inverted when the edge points away from the child). Devices
/// outside the anchor's tree are reported as unplaced.
///
/// # Panics
///
/// Panics if `anchor` is not one of `frames`.
pub fn solve_layout(
    edges: &[RegistrationEdge],
    frames: &BTreeMap<DeviceId, (u32, u32)>,
    anchor: &DeviceId,
) -> PanoramaLayout {
    assert!(frames.contains_key(anchor), "anchor {anchor} is not a session device");
    let index: BTreeMap<&DeviceId, usize> = frames.keys().enumerate().map(|(i, d)| (d, i)).collect();

    let mut candidates: Vec<&RegistrationEdge> = edges
        .iter()
        .filter(|e| e.device_a != e.device_b && index.contains_key(&e.device_a) && index.contains_key(&e.device_b))
        .filter(|e| e.transform.is_invertible())
        .collect();
    candidates.sort_by(|a, b| edge_priority(a, b));

    let mut forest = DisjointSet::new(frames.len());
    let mut adjacency: BTreeMap<&DeviceId, Vec<&RegistrationEdge>> = BTreeMap::new();
    let mut tree = Vec::new();
    for e in candidates {
        if forest.union(index[&e.device_a], index[&e.device_b]) {
            adjacency.entry(&e.device_a).or_default().push(e);
            adjacency.entry(&e.device_b).or_default().push(e);
            tree.push(e);
        }
    }

    let mut placements = BTreeMap::new();
    placements.insert(anchor.clone(), AffineTransform::IDENTITY);
    let mut queue = VecDeque::from([anchor]);
    while let Some(parent) = queue.pop_front() {
        let parent_t = placements[parent];
        let mut next: Vec<(&DeviceId, AffineTransform)> = adjacency
            .get(parent)
            .into_iter()
            .flatten()
            .filter_map(|e| {
                // Child-to-parent transform for this edge.
                let (child, to_parent) = if &e.device_b == parent {
                    (&e.device_a, e.transform)
                } else {
                    (&e.device_b, e.transform.inverse()?)
                };
                Some((child, to_parent))
            })
            .filter(|(child, _)| !placements.contains_key(*child))
            .collect();
        next.sort_by(|a, b| a.0.cmp(b.0));
        for (child, to_parent) in next {
            placements.insert(child.clone(), parent_t * to_parent);
            queue.push_back(child);
        }
    }

    let sizes: BTreeMap<DeviceId, (u32, u32)> = placements.keys().map(|d| (d.clone(), frames[d])).collect();
    let unplaced = frames.keys().filter(|d| !placements.contains_key(*d)).cloned().collect();
    let in_tree: BTreeSet<&DeviceId> = placements.keys().collect();
    let tree = tree.into_iter().filter(|e| in_tree.contains(&e.device_a)).cloned().collect();
    PanoramaLayout { anchor: anchor.clone(), bounds: hull_of(&placements, &sizes), placements, unplaced, sizes, tree }
}

/// The host when it is connected to at least one other device (or alone in
/// the session); otherwise the device with the largest total inlier weight.
pub fn choose_anchor(edges: &[RegistrationEdge], devices: &BTreeSet<DeviceId>, host: Option<&DeviceId>) -> Option<DeviceId> {
    let first = devices.iter().next()?.clone();
    let mut weight: BTreeMap<&DeviceId, usize> = devices.iter().map(|d| (d, 0)).collect();
    for e in edges.iter().filter(|e| e.device_a != e.device_b) {
        if devices.contains(&e.device_a) && devices.contains(&e.device_b) {
            *weight.get_mut(&e.device_a).unwrap() += e.inlier_count;
            *weight.get_mut(&e.device_b).unwrap() += e.inlier_count;
        }
    }
    if let Some(h) = host.filter(|h| devices.contains(*h)) {
        if weight[h] > 0 || devices.len() == 1 || weight.values().all(|&w| w == 0) {
            return Some(h.clone());
        }
    }
    let best = weight
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(d, _)| (*d).clone());
    best.or(Some(first))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(a: &str, b: &str, t: AffineTransform, inliers: usize) -> RegistrationEdge {
        RegistrationEdge { device_a: a.into(), device_b: b.into(), transform: t, inlier_count: inliers, rms_error: 0.5 }
    }

    fn frames(ids: &[&str]) -> BTreeMap<DeviceId, (u32, u32)> {
        ids.iter().map(|&d| (DeviceId::from(d), (300, 225))).collect()
    }

    #[test]
    fn single_device_is_identity() {
        let l = solve_layout(&[], &frames(&["a"]), &"a".into());
        assert_eq!(l.placements.len(), 1);
        assert_eq!(l.placements[&DeviceId::from("a")], AffineTransform::IDENTITY);
        assert!(l.unplaced.is_empty());
        assert_eq!(l.bounds, Rect::new(0, 0, 300, 225));
    }

    #[test]
    fn chain_composes_against_matrix_oracle() {
        let ab = AffineTransform::translation(100.0, 0.0);
        let bc = AffineTransform::translation(120.0, 10.0);
        let l = solve_layout(&[edge("a", "b", ab, 50), edge("b", "c", bc, 40)], &frames(&["a", "b", "c"]), &"b".into());
        // Oracle: plain 3x3 homogeneous matrices, inverted by hand.
        let m = |t: &AffineTransform| [[t.a11, t.a12, t.tx], [t.a21, t.a22, t.ty], [0.0, 0.0, 1.0]];
        let bc_inv = [[1.0, 0.0, -120.0], [0.0, 1.0, -10.0], [0.0, 0.0, 1.0]];
        let a = l.placements[&DeviceId::from("a")];
        let c = l.placements[&DeviceId::from("c")];
        for (got, want) in [(m(&a), m(&ab)), (m(&c), bc_inv)] {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((got[i][j] - want[i][j]).abs() < 1e-9);
                }
            }
        }
        assert_eq!(l.bounds, Rect::new(-120, -10, 520, 235));
    }

    #[test]
    fn disconnected_device_is_unplaced() {
        let t = AffineTransform::translation(50.0, 0.0);
        let l = solve_layout(
            &[edge("a", "b", t, 30), edge("b", "c", t, 30), edge("a", "c", t * t, 20)],
            &frames(&["a", "b", "c", "d"]),
            &"a".into(),
        );
        assert_eq!(l.unplaced, BTreeSet::from([DeviceId::from("d")]));
        assert_eq!(l.placements.len(), 3);
        assert_eq!(l.tree.len(), 2);
    }

    #[test]
    fn spanning_tree_prefers_more_inliers() {
        // The weak direct a-c edge disagrees with the strong chain a-b-c.
        let l = solve_layout(
            &[
                edge("a", "b", AffineTransform::translation(10.0, 0.0), 90),
                edge("b", "c", AffineTransform::translation(10.0, 0.0), 80),
                edge("a", "c", AffineTransform::translation(25.0, 0.0), 15),
            ],
            &frames(&["a", "b", "c"]),
            &"c".into(),
        );
        let a = l.placements[&DeviceId::from("a")];
        assert!((a.tx - 20.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_prefers_connected_host() {
        let t = AffineTransform::translation(5.0, 0.0);
        let devices: BTreeSet<DeviceId> = ["a", "b", "c"].into_iter().map(DeviceId::from).collect();
        let edges = [edge("b", "c", t, 40)];
        assert_eq!(choose_anchor(&edges, &devices, Some(&"c".into())), Some("c".into()));
        assert_eq!(choose_anchor(&edges, &devices, Some(&"a".into())), Some("b".into()));
        assert_eq!(choose_anchor(&[], &devices, Some(&"a".into())), Some("a".into()));
    }

    #[test]
    fn rescale_maps_capture_pixels() {
        let l = solve_layout(
            &[edge("a", "b", AffineTransform::translation(-240.0, 0.0), 50)],
            &frames(&["a", "b"]),
            &"a".into(),
        );
        let scale: BTreeMap<DeviceId, f64> = [("a".into(), 0.25), ("b".into(), 0.25)].into();
        let sizes: BTreeMap<DeviceId, (u32, u32)> = [("a".into(), (1200, 900)), ("b".into(), (1200, 900))].into();
        let full = l.rescaled(&scale, 4.0, &sizes);
        assert!((full.placements[&DeviceId::from("b")].tx - 960.0).abs() < 1e-9);
        assert_eq!(full.bounds, Rect::new(0, 0, 2160, 900));
    }
}

use std::collections::BTreeMap;

use super::Feature;

/// Lowe ratio threshold used when none is configured.
pub const DEFAULT_RATIO: f32 = 0.8;

/// A correspondence between `a[index_a]` and `b[index_b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    /// Hamming distance between the two descriptors.
    pub distance: f32,
}

/// Brute-force nearest-neighbour matching with a ratio test.
///
/// A feature of `a` is matched to its nearest neighbour in `b` when the best
/// distance is strictly below `ratio` times the second best. When several
/// features of `a` land on the same feature of `b`, only the closest pair
/// survives (ties keep the lower `index_a`). The result is ordered by
/// `index_a`.
pub fn match_features(a: &[Feature], b: &[Feature], ratio: f32) -> Vec<MatchPair> {
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut best_per_b: BTreeMap<usize, MatchPair> = BTreeMap::new();
    for (ia, fa) in a.iter().enumerate() {
        let mut first = (u32::MAX, usize::MAX);
        let mut second = u32::MAX;
        for (ib, fb) in b.iter().enumerate() {
            let d = fa.descriptor.hamming(&fb.descriptor);
            if d < first.0 {
                second = first.0;
                first = (d, ib);
            } else if d < second {
                second = d;
            }
        }
        let (d1, ib) = first;
        // With a single candidate there is no second neighbour to compare against.
        let passes = second == u32::MAX || (d1 as f32) < ratio * second as f32;
        if !passes {
            continue;
        }
        let candidate = MatchPair { index_a: ia, index_b: ib, distance: d1 as f32 };
        best_per_b
            .entry(ib)
            .and_modify(|kept| {
                if candidate.distance < kept.distance {
                    *kept = candidate;
                }
            })
            .or_insert(candidate);
    }
    let mut out: Vec<MatchPair> = best_per_b.into_values().collect();
    out.sort_by_key(|m| m.index_a);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Descriptor;

    fn feat(bits: [u64; 4]) -> Feature {
        Feature { x: 0.0, y: 0.0, score: 1.0, angle: 0.0, descriptor: Descriptor(bits) }
    }

    #[test]
    fn empty_sides_yield_nothing() {
        let a = vec![feat([1, 2, 3, 4])];
        assert!(match_features(&a, &[], 0.8).is_empty());
        assert!(match_features(&[], &a, 0.8).is_empty());
    }

    #[test]
    fn self_match_with_distance_zero() {
        let list: Vec<Feature> = (0..6u64).map(|i| feat([u64::MAX << (i * 9), i, !i, i * 77])).collect();
        let m = match_features(&list, &list, 0.8);
        assert_eq!(m.len(), list.len());
        for (i, p) in m.iter().enumerate() {
            assert_eq!((p.index_a, p.index_b, p.distance), (i, i, 0.0));
        }
    }

    #[test]
    fn ambiguous_neighbours_are_rejected() {
        let a = vec![feat([0xff, 0, 0, 0])];
        let b = vec![feat([0xfe, 0, 0, 0]), feat([0xfe, 0, 0, 0]), feat([!0, !0, 0, 0])];
        assert!(match_features(&a, &b, 0.8).is_empty());
    }

    #[test]
    fn collisions_keep_the_closest() {
        let a = vec![feat([0b1111, 0, 0, 0]), feat([0b0111, 0, 0, 0])];
        let b = vec![feat([0b0111, 0, 0, 0]), feat([!0, !0, !0, !0])];
        let m = match_features(&a, &b, 0.9);
        assert_eq!(m, vec![MatchPair { index_a: 1, index_b: 0, distance: 0.0 }]);
    }
}

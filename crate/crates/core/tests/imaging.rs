use copano_core::imaging::{detect_features, downscale_to_max_dim, match_features, Image, DEFAULT_MAX_FEATURES};
use copano_core::texture::{procedural, DEFAULT_SCENE_SEED};
use proptest::prelude::*;

fn scene() -> Image {
    procedural(900, 500, DEFAULT_SCENE_SEED)
}

#[test]
fn offset_viewports_match_consistently() {
    let scene = scene();
    let a = scene.crop(100, 100, 300, 225);
    let b = scene.crop(140, 100, 300, 225);
    let fa = detect_features(&a, DEFAULT_MAX_FEATURES, 0);
    let fb = detect_features(&b, DEFAULT_MAX_FEATURES, 0);
    let matches = match_features(&fa, &fb, 0.8);
    assert!(matches.len() >= 30, "only {} matches", matches.len());
    // A scene point at x in frame a sits at x - 40 in frame b.
    let consistent = matches
        .iter()
        .filter(|m| {
            let (pa, pb) = (&fa[m.index_a], &fb[m.index_b]);
            ((pa.x - 40.0 - pb.x).powi(2) + (pa.y - pb.y).powi(2)).sqrt() <= 2.0
        })
        .count();
    let share = consistent as f64 / matches.len() as f64;
    assert!(share >= 0.7, "{consistent}/{} consistent", matches.len());
}

#[test]
fn identical_lists_self_match() {
    let f = detect_features(&scene().crop(0, 0, 300, 225), 200, 3);
    let matches = match_features(&f, &f, 0.8);
    assert!(!matches.is_empty());
    for m in &matches {
        assert_eq!(m.index_a, m.index_b);
        assert_eq!(m.distance, 0.0);
    }
}

#[test]
fn ambiguous_target_is_rejected() {
    let f = detect_features(&scene().crop(0, 0, 300, 225), 50, 3);
    let b = vec![f[0].clone(), f[0].clone()];
    let matches = match_features(&f[..1], &b, 0.8);
    assert!(matches.is_empty());
}

#[test]
fn empty_side_gives_no_matches() {
    let f = detect_features(&scene().crop(0, 0, 300, 225), 50, 3);
    assert!(match_features(&f, &[], 0.8).is_empty());
    assert!(match_features(&[], &f, 0.8).is_empty());
}

#[test]
fn detection_and_matching_are_deterministic() {
    let s = scene();
    let a = s.crop(10, 20, 300, 225);
    let b = s.crop(60, 30, 300, 225);
    let run = || {
        let fa = detect_features(&a, 300, 9);
        let fb = detect_features(&b, 300, 9);
        let m = match_features(&fa, &fb, 0.8);
        (fa, fb, m)
    };
    assert_eq!(run(), run());
}

#[test]
fn match_distances_and_injectivity_hold_on_small_lists() {
    let s = scene();
    let fa = detect_features(&s.crop(0, 0, 300, 225), 40, 1);
    let fb = detect_features(&s.crop(25, 15, 300, 225), 40, 1);
    let matches = match_features(&fa, &fb, 0.9);
    let mut seen = std::collections::BTreeSet::new();
    for m in &matches {
        assert!(seen.insert(m.index_b), "b index {} used twice", m.index_b);
        // Recount differing bits one at a time.
        let (da, db) = (&fa[m.index_a].descriptor.0, &fb[m.index_b].descriptor.0);
        let mut bits = 0;
        for w in 0..da.len() {
            for k in 0..64 {
                bits += ((da[w] >> k) & 1 != (db[w] >> k) & 1) as u32;
            }
        }
        assert_eq!(m.distance, bits as f32);
        // And it really was the nearest neighbour.
        let nearest = fb.iter().map(|f| fa[m.index_a].descriptor.hamming(&f.descriptor)).min().unwrap();
        assert_eq!(bits, nearest);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn downscale_is_idempotent(w in 1u32..700, h in 1u32..700, max_dim in 1u32..400, seed in any::<u64>()) {
        let img = Image::from_fn(w, h, |x, y| {
            let v = (x as u64 * 31 + y as u64 * 17 + seed) % 251;
            [v as u8, (v * 3 % 256) as u8, (255 - v) as u8]
        });
        let once = downscale_to_max_dim(&img, max_dim);
        prop_assert!(once.width().max(once.height()) <= max_dim.max(1));
        let twice = downscale_to_max_dim(&once, max_dim);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn matching_is_injective_on_b(ox in 0u32..80, oy in 0u32..60, ratio in 0.5f32..1.0) {
        let s = procedural(400, 300, 5);
        let fa = detect_features(&s.crop(0, 0, 300, 225), 120, 2);
        let fb = detect_features(&s.crop(ox, oy, 300, 225), 120, 2);
        let m = match_features(&fa, &fb, ratio);
        let mut bs: Vec<usize> = m.iter().map(|p| p.index_b).collect();
        let n = bs.len();
        bs.sort_unstable();
        bs.dedup();
        prop_assert_eq!(bs.len(), n);
    }
}

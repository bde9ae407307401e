use std::collections::{BTreeMap, BTreeSet};

use copano_core::alignment::{
    choose_anchor, estimate_affine_ransac, pairwise_register, solve_layout, AffineTransform, FrameFeatures, Point,
    RansacParams, RegistrationEdge, RegistrationParams,
};
use copano_core::imaging::MatchPair;
use copano_core::texture::{procedural, DEFAULT_SCENE_SEED};
use copano_core::DeviceId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Row-major 3x3 product written out longhand, independent of the library's
/// composition operator.
fn oracle_mul(a: &AffineTransform, b: &AffineTransform) -> AffineTransform {
    let m = |t: &AffineTransform| [[t.a11, t.a12, t.tx], [t.a21, t.a22, t.ty], [0.0, 0.0, 1.0]];
    let (x, y) = (m(a), m(b));
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                r[i][j] += x[i][k] * y[k][j];
            }
        }
    }
    AffineTransform { a11: r[0][0], a12: r[0][1], tx: r[0][2], a21: r[1][0], a22: r[1][1], ty: r[1][2] }
}

fn oracle_inverse(t: &AffineTransform) -> AffineTransform {
    let det = t.a11 * t.a22 - t.a12 * t.a21;
    let (a11, a12, a21, a22) = (t.a22 / det, -t.a12 / det, -t.a21 / det, t.a11 / det);
    AffineTransform { a11, a12, a21, a22, tx: -(a11 * t.tx + a12 * t.ty), ty: -(a21 * t.tx + a22 * t.ty) }
}

#[test]
fn ransac_with_forty_percent_outliers_recovers_corners() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = AffineTransform {
            a11: 0.97,
            a12: -0.08,
            a21: 0.07,
            a22: 1.02,
            tx: rng.random_range(-120.0..120.0),
            ty: rng.random_range(-60.0..60.0),
        };
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        for i in 0..100 {
            let p = Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..225.0));
            let q = if i < 60 {
                let q = truth.apply(p);
                Point::new(q.x + noise.sample(&mut rng), q.y + noise.sample(&mut rng))
            } else {
                Point::new(rng.random_range(-150.0..450.0), rng.random_range(-100.0..325.0))
            };
            pa.push(p);
            pb.push(q);
        }
        let matches: Vec<MatchPair> = (0..100).map(|i| MatchPair { index_a: i, index_b: i, distance: 0.0 }).collect();
        let fit = estimate_affine_ransac(&matches, &pa, &pb, &RansacParams { seed, ..Default::default() }).unwrap();
        let got = fit.transform.frame_corners(300, 225);
        let want = truth.frame_corners(300, 225);
        let rms = (got.iter().zip(&want).map(|(g, w)| g.distance(w).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(rms <= 1.0, "seed {seed}: corner rms {rms}");
        assert!(fit.inlier_count >= 55);
    }
}

#[test]
fn ransac_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pa: Vec<Point> = (0..60).map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..225.0))).collect();
    let pb: Vec<Point> = pa.iter().map(|p| Point::new(p.x + 5.0 + rng.random_range(-1.0..1.0), p.y - 3.0)).collect();
    let matches: Vec<MatchPair> = (0..60).map(|i| MatchPair { index_a: i, index_b: i, distance: 0.0 }).collect();
    let p = RansacParams { seed: 77, ..Default::default() };
    let a = estimate_affine_ransac(&matches, &pa, &pb, &p).unwrap();
    let b = estimate_affine_ransac(&matches, &pa, &pb, &p).unwrap();
    assert_eq!(a.transform.params().map(f64::to_bits), b.transform.params().map(f64::to_bits));
    assert_eq!(a.inlier_mask, b.inlier_mask);
}

fn viewport_features(x: u32, y: u32, id: &str) -> FrameFeatures {
    let scene = procedural(1200, 500, DEFAULT_SCENE_SEED);
    FrameFeatures::extract(id.into(), &scene.crop(x, y, 300, 225), &RegistrationParams::default())
}

#[test]
fn fifth_overlap_registers_to_ground_truth() {
    let a = viewport_features(100, 120, "a");
    let b = viewport_features(340, 130, "b");
    let edge = pairwise_register(&a, &b, &RegistrationParams::default()).expect("edge for 1/5 overlap");
    // Scene point (X, Y) is (X - 100, Y - 120) in a and (X - 340, Y - 130) in b.
    let truth = AffineTransform::translation(-240.0, -10.0);
    for c in truth.frame_corners(300, 225).iter().zip(edge.transform.frame_corners(300, 225)) {
        assert!(c.0.distance(&c.1) < 1.5, "{c:?}");
    }
    assert!(edge.inlier_count >= 12);
}

#[test]
fn disjoint_viewports_do_not_register() {
    let a = viewport_features(0, 100, "a");
    let b = viewport_features(700, 100, "b");
    assert!(pairwise_register(&a, &b, &RegistrationParams::default()).is_none());
}

fn edge(a: &str, b: &str, t: AffineTransform, inliers: usize) -> RegistrationEdge {
    RegistrationEdge { device_a: a.into(), device_b: b.into(), transform: t, inlier_count: inliers, rms_error: 0.5 }
}

fn arb_transform() -> impl Strategy<Value = AffineTransform> {
    (-0.3f64..0.3, 0.8f64..1.25, -200.0f64..200.0, -150.0f64..150.0).prop_map(|(rot, s, tx, ty)| {
        let (sin, cos) = rot.sin_cos();
        AffineTransform { a11: s * cos, a12: -s * sin, a21: s * sin, a22: s * cos, tx, ty }
    })
}

/// A random tree over `n` devices: device i (i >= 1) links to a random
/// earlier device, with random edge direction.
fn arb_tree(n: usize) -> impl Strategy<Value = Vec<(usize, usize, bool, AffineTransform)>> {
    let parents: Vec<_> = (1..n).map(|i| (0..i, any::<bool>(), arb_transform())).collect();
    parents.prop_map(|v| v.into_iter().enumerate().map(|(i, (p, flip, t))| (i + 1, p, flip, t)).collect())
}

fn names(n: usize) -> Vec<DeviceId> {
    (0..n).map(|i| DeviceId::new(format!("dev{i}"))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn placements_equal_oracle_path_products(tree in arb_tree(6), anchor in 0usize..6) {
        let ids = names(6);
        let edges: Vec<RegistrationEdge> = tree.iter().map(|(c, p, flip, t)| {
            if *flip { edge(ids[*p].as_str(), ids[*c].as_str(), *t, 30) } else { edge(ids[*c].as_str(), ids[*p].as_str(), *t, 30) }
        }).collect();
        let sizes: BTreeMap<DeviceId, (u32, u32)> = ids.iter().map(|d| (d.clone(), (300, 225))).collect();
        let layout = solve_layout(&edges, &sizes, &ids[anchor]);
        prop_assert!(layout.unplaced.is_empty());

        // Oracle: map of device -> transform into device 0's frame, built
        // by walking up the parent links.
        let mut to_root: Vec<AffineTransform> = vec![AffineTransform::IDENTITY; 6];
        for (c, p, flip, t) in &tree {
            // child -> parent
            let step = if *flip { oracle_inverse(t) } else { *t };
            to_root[*c] = oracle_mul(&to_root[*p], &step);
        }
        let root_to_anchor = oracle_inverse(&to_root[anchor]);
        for (i, d) in ids.iter().enumerate() {
            let want = oracle_mul(&root_to_anchor, &to_root[i]);
            let got = layout.placements[d];
            prop_assert!(got.max_abs_diff(&want) <= 1e-9 * (1.0 + want.tx.abs().max(want.ty.abs())), "{d}: {got:?} vs {want:?}");
        }
        prop_assert_eq!(layout.placements[&ids[anchor]], AffineTransform::IDENTITY);

        // Bounds hold every corner.
        for d in &ids {
            for c in layout.quad(d).unwrap() {
                prop_assert!(c.x >= layout.bounds.x as f64 - 1e-6 && c.x <= layout.bounds.right() as f64 + 1e-6);
                prop_assert!(c.y >= layout.bounds.y as f64 - 1e-6 && c.y <= layout.bounds.bottom() as f64 + 1e-6);
            }
        }
    }

    #[test]
    fn relative_geometry_ignores_anchor(tree in arb_tree(5), a1 in 0usize..5, a2 in 0usize..5) {
        let ids = names(5);
        let edges: Vec<RegistrationEdge> = tree.iter()
            .map(|(c, p, flip, t)| if *flip { edge(ids[*p].as_str(), ids[*c].as_str(), *t, 20) } else { edge(ids[*c].as_str(), ids[*p].as_str(), *t, 20) })
            .collect();
        let sizes: BTreeMap<DeviceId, (u32, u32)> = ids.iter().map(|d| (d.clone(), (300, 225))).collect();
        let l1 = solve_layout(&edges, &sizes, &ids[a1]);
        let l2 = solve_layout(&edges, &sizes, &ids[a2]);
        for d in &ids {
            for e in &ids {
                let r1 = l1.placements[d].inverse().unwrap() * l1.placements[e];
                let r2 = l2.placements[d].inverse().unwrap() * l2.placements[e];
                prop_assert!(r1.max_abs_diff(&r2) <= 1e-6, "{d}->{e}: {r1:?} vs {r2:?}");
            }
        }
    }

    #[test]
    fn placed_and_unplaced_partition_devices(tree in arb_tree(4), extra in 0usize..3) {
        let ids = names(4 + extra);
        let edges: Vec<RegistrationEdge> =
            tree.iter().map(|(c, p, _, t)| edge(ids[*c].as_str(), ids[*p].as_str(), *t, 15)).collect();
        let sizes: BTreeMap<DeviceId, (u32, u32)> = ids.iter().map(|d| (d.clone(), (300, 225))).collect();
        let layout = solve_layout(&edges, &sizes, &ids[0]);
        let placed: BTreeSet<_> = layout.placements.keys().cloned().collect();
        prop_assert!(placed.is_disjoint(&layout.unplaced));
        prop_assert_eq!(placed.len() + layout.unplaced.len(), ids.len());
        prop_assert_eq!(layout.unplaced.len(), extra);
    }
}

#[test]
fn host_anchor_falls_back_to_heaviest_device() {
    let edges = vec![edge("b", "c", AffineTransform::translation(1.0, 0.0), 40), edge("c", "d", AffineTransform::IDENTITY, 20)];
    let devices: BTreeSet<DeviceId> = ["a", "b", "c", "d"].map(DeviceId::from).into();
    assert_eq!(choose_anchor(&edges, &devices, Some(&"b".into())), Some("b".into()));
    assert_eq!(choose_anchor(&edges, &devices, Some(&"a".into())), Some("c".into()));
}

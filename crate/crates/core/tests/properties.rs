use proptest::prelude::*;
use proptest::sample::Index;

use ndarray::Array2;
use pointseq::data::{gen_shape, parse_off, parse_xyz, write_xyz, ShapeFamily};
use pointseq::geometry::{farthest_point_sampling, knn_group, normalize, Point3, PointCloud, StartRule};
use pointseq::nn::{checkpoint, prepare, Model, ModelConfig};
use pointseq::oracle;
use pointseq::perturb::{dropout_points, flip_horizontal, jitter, rotate, Rotation};
use pointseq::serialize::{
    adjacent_distances, axis_triple, nimba_reorder, nimba_reorder_with, CandidateRule, ProximityThreshold,
};
use pointseq::ssm::{s6_materialize, s6_scan_seq, softmax_rows, S6Params};

fn point() -> impl Strategy<Value = Point3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..=max)
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    points(max).prop_map(|p| PointCloud::new(p).unwrap())
}

fn isometry() -> impl Strategy<Value = (Rotation, Point3)> {
    (point(), 0.0..std::f64::consts::TAU, point()).prop_filter_map("degenerate axis", |(axis, angle, shift)| {
        (axis.norm() > 1e-3).then(|| (Rotation::axis_angle(axis, angle).unwrap(), shift * 4.0))
    })
}

fn dist_matrix(p: &[Point3]) -> Vec<f64> {
    p.iter().flat_map(|a| p.iter().map(move |b| a.dist(*b))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fps_is_deterministic_and_isometry_equivariant(c in cloud(120), (rot, shift) in isometry(), k in any::<Index>()) {
        let n_c = k.index(c.len()) + 1;
        let (_, a) = farthest_point_sampling(&c, n_c, StartRule::Index(0)).unwrap();
        let (_, b) = farthest_point_sampling(&c, n_c, StartRule::Index(0)).unwrap();
        prop_assert_eq!(&a, &b);
        let moved = c.map_points(|p| rot.apply(p) + shift).unwrap();
        let (_, m) = farthest_point_sampling(&moved, n_c, StartRule::Index(0)).unwrap();
        prop_assert_eq!(a, m);
    }

    #[test]
    fn knn_indices_survive_isometries(c in cloud(100), (rot, shift) in isometry(), k in any::<Index>()) {
        let n_p = k.index(c.len()) + 1;
        let n_c = n_p.min(8);
        let (centers, idx) = farthest_point_sampling(&c, n_c, StartRule::Index(0)).unwrap();
        let base = knn_group(&c, &centers, &idx, n_p).unwrap();
        let moved = c.map_points(|p| rot.apply(p) + shift).unwrap();
        let mc: Vec<Point3> = centers.iter().map(|&p| rot.apply(p) + shift).collect();
        let other = knn_group(&moved, &mc, &idx, n_p).unwrap();
        prop_assert_eq!(base.patch_indices, other.patch_indices);
    }

    #[test]
    fn normalize_is_idempotent(c in cloud(200), scale in 0.01..100.0f64) {
        let c = c.map_points(|p| p * scale).unwrap();
        prop_assume!(c.points().iter().any(|p| p.dist(c.points()[0]) > 1e-9));
        let once = normalize(&c).unwrap();
        let twice = normalize(&once).unwrap();
        let max = once.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        prop_assert!(once.centroid().norm() < 1e-12);
        for (a, b) in once.points().iter().zip(twice.points()) {
            prop_assert!(a.dist(*b) < 1e-12);
        }
    }

    #[test]
    fn proximity_order_is_a_replayable_permutation(pts in points(96), r in 0.0..2.0f64) {
        let order = nimba_reorder(&pts, ProximityThreshold::new(r).unwrap()).order;
        prop_assert!(oracle::is_permutation(&order, pts.len()));
        prop_assert_eq!(&order, &oracle::nimba_replay(&pts, r));
        prop_assert_eq!(order, nimba_reorder(&pts, ProximityThreshold::new(r).unwrap()).order);
    }

    #[test]
    fn nearest_rule_still_permutes(pts in points(64), r in 0.0..2.0f64) {
        let s = nimba_reorder_with(&pts, ProximityThreshold::new(r).unwrap(), CandidateRule::Nearest);
        prop_assert!(oracle::is_permutation(&s.order, pts.len()));
    }

    #[test]
    fn degenerate_thresholds_give_the_y_sort(pts in points(64)) {
        let ys = oracle::ysort(&pts);
        prop_assert_eq!(&nimba_reorder(&pts, ProximityThreshold::new(0.0).unwrap()).order, &ys);
        prop_assert_eq!(&nimba_reorder(&pts, ProximityThreshold::new(2.0 * 3f64.sqrt()).unwrap()).order, &ys);
    }

    #[test]
    fn axis_triple_is_three_sorted_copies(pts in points(64)) {
        let s = axis_triple(&pts);
        let n = pts.len();
        prop_assert_eq!(s.order.len(), 3 * n);
        for (axis, chunk) in s.order.chunks(n).enumerate() {
            prop_assert!(oracle::is_permutation(chunk, n));
            prop_assert!(chunk.windows(2).all(|w| pts[w[0]].coord(axis) <= pts[w[1]].coord(axis)));
        }
        prop_assert_eq!(adjacent_distances(&pts, &s).len(), 3 * n - 1);
    }

    #[test]
    fn s6_matrix_is_causal_and_lower_triangular(len in 1usize..24, d in 1usize..5, n in 1usize..5, seed in any::<u64>(), j in any::<Index>()) {
        let p = S6Params::random(d, n, seed);
        let x = Array2::from_shape_fn((len, d), |(i, c)| ((i * 31 + c * 17 + seed as usize % 97) % 13) as f64 / 6.5 - 1.0);
        for ch in 0..d {
            let m = s6_materialize(&p, x.view(), ch).unwrap();
            for r in 0..len {
                for c in r + 1..len {
                    prop_assert_eq!(m[[r, c]], 0.0);
                }
            }
        }
        let j = j.index(len);
        let y = s6_scan_seq(&p, x.view()).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(j).mapv_inplace(|v| v + 0.5);
        let y2 = s6_scan_seq(&p, x2.view()).unwrap();
        for i in 0..j {
            prop_assert_eq!(y.row(i), y2.row(i));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..10, cols in 1usize..40, scale in 0.1..200.0f64, seed in any::<u32>()) {
        let mut m = Array2::from_shape_fn((rows, cols), |(i, j)| (((i * 7919 + j * 104729 + seed as usize) % 1000) as f64 / 500.0 - 1.0) * scale);
        softmax_rows(&mut m);
        for r in m.rows() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn perturbations_are_seeded_and_keep_counts(c in cloud(150), seed in any::<u64>(), p in 0.0..=1.0f64) {
        prop_assert_eq!(jitter(&c, 0.01, 0.05, seed).unwrap(), jitter(&c, 0.01, 0.05, seed).unwrap());
        prop_assert_eq!(jitter(&c, 0.01, 0.05, seed).unwrap().len(), c.len());
        prop_assert_eq!(flip_horizontal(&c, 0.5, seed).unwrap().len(), c.len());
        let dropped = dropout_points(&c, p, seed).unwrap();
        prop_assert!(dropped.len() <= c.len());
        prop_assert_eq!(dropped, dropout_points(&c, p, seed).unwrap());
        let r = rotate(&c, seed).unwrap();
        prop_assert_eq!(&r, &rotate(&c, seed).unwrap());
        for (a, b) in dist_matrix(c.points()).iter().zip(dist_matrix(r.points())) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_is_clipped(c in cloud(100), seed in any::<u64>(), clip in 0.0..0.2f64) {
        let j = jitter(&c, 1.0, clip, seed).unwrap();
        for (a, b) in c.points().iter().zip(j.points()) {
            for axis in 0..3 {
                prop_assert!((a.coord(axis) - b.coord(axis)).abs() <= clip + 1e-15);
            }
        }
    }

    #[test]
    fn generated_shapes_are_seeded_and_normalized(family in 0usize..6, seed in any::<u64>(), n in 16usize..300) {
        let fam = ShapeFamily::ALL[family];
        let kind = fam.canonical();
        let a = gen_shape(&kind, n, seed).unwrap();
        prop_assert_eq!(&a, &gen_shape(&kind, n, seed).unwrap());
        prop_assert_eq!(a.len(), n);
        let max = a.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        prop_assert!(a.centroid().norm() < 1e-12);
    }

    #[test]
    fn off_samples_lie_on_their_triangles(verts in prop::collection::vec(point(), 3..12), seed in any::<u64>()) {
        let n = verts.len();
        let mut text = format!("OFF\n{n} {} 0\n", n - 2);
        for v in &verts {
            text += &format!("{:?} {:?} {:?}\n", v.x, v.y, v.z);
        }
        for i in 1..n - 1 {
            text += &format!("3 0 {} {}\n", i, i + 1);
        }
        let mesh = parse_off(&text).unwrap();
        prop_assume!((0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).sum::<f64>() > 1e-6);
        let (pts, tris) = mesh.sample(64, seed).unwrap();
        for (p, t) in pts.iter().zip(tris) {
            let [a, b, c] = mesh.triangle(t);
            let normal = (b - a).cross(c - a);
            prop_assume!(normal.norm() > 1e-6);
            prop_assert!((*p - a).dot(normal).abs() / normal.norm() < 1e-9);
            let area = mesh.triangle_area(t);
            let sub = 0.5 * ((b - *p).cross(c - *p).norm() + (c - *p).cross(a - *p).norm() + (a - *p).cross(b - *p).norm());
            prop_assert!((sub - area).abs() < 1e-9, "outside triangle: {} vs {}", sub, area);
        }
    }

    #[test]
    fn xyz_round_trip_is_exact(pts in prop::collection::vec(prop::array::uniform3(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL), 1..50)) {
        let c = PointCloud::new(pts.into_iter().map(Point3::from).collect()).unwrap();
        let back = parse_xyz(&write_xyz(&c)).unwrap();
        prop_assert_eq!(back.points(), c.points());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn patch_embedding_ignores_point_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let cfg = ModelConfig::toy();
        let model = Model::new(cfg.clone(), seed).unwrap();
        let c = gen_shape(&ShapeFamily::Torus.canonical(), cfg.n_points, seed).unwrap();
        let sample = prepare(&c, &cfg, 0, 0).unwrap();
        let mut shuffled = sample.clone();
        let n_p = cfg.n_p;
        for patch in 0..cfg.n_c {
            let rot = (perm_seed as usize).wrapping_add(patch) % n_p;
            for i in 0..n_p {
                let src = patch * n_p + (i + rot) % n_p;
                shuffled.patches.row_mut(patch * n_p + i).assign(&sample.patches.row(src));
            }
        }
        let a = model.embed_patches(&sample);
        let b = model.embed_patches(&shuffled);
        prop_assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), layers in 0usize..3, pe in any::<bool>()) {
        let cfg = ModelConfig { layers, use_positional_embedding: pe, ..ModelConfig::toy() };
        let model = Model::new(cfg, seed).unwrap();
        let bytes = checkpoint::to_bytes(&model);
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&checkpoint::to_bytes(&back), &bytes);
        prop_assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

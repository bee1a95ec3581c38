//! Randomized invariants over the public API.

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use metric_recon::camera::{project, unproject, CoordMap, DepthMap, Intrinsics};
use metric_recon::losses::{align_scale, bce, huber, point_loss, BCE_EPS};
use metric_recon::metrics::{relative_pose_metrics, Thresholds};
use metric_recon::pnp::{soft_argmax, Heatmap, Keypoints2D};
use metric_recon::scene::format::{decode_raster, encode_raster, Dtype};
use metric_recon::scene::raycast::{Ray, Surface};
use metric_recon::transforms::{orthogonalize_9d, relative_pose, rotation_angle, NineD, Rotation};
use metric_recon::{Grid, PointMap, RigidTransform, Similarity, Transform3};

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (vec3(1.0), 0.0..std::f64::consts::PI).prop_filter_map("nonzero axis", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| Rotation::about_axis(&axis, angle))
    })
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (rotation(), vec3(3.0)).prop_map(|(r, t)| RigidTransform::new(r, t))
}

fn similarity() -> impl Strategy<Value = Similarity> {
    (0.05..20.0f64, rigid()).prop_map(|(s, r)| Similarity::new(s, r).unwrap())
}

fn point_map(n: usize) -> impl Strategy<Value = PointMap> {
    prop::collection::vec((vec3(1.0), 0.3..3.0f64), n).prop_map(move |pts| {
        let values = Grid::from_vec(
            1,
            pts.len(),
            pts.iter().map(|(p, z)| Vector3::new(p.x, p.y, *z)).collect(),
        )
        .unwrap();
        PointMap::new(values, Grid::filled(1, pts.len(), true)).unwrap()
    })
}

fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + b.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn orthogonalize_gives_a_rotation(m in prop::array::uniform9(-5.0..5.0f64)) {
        let raw = NineD(m);
        prop_assume!(raw.matrix().determinant().abs() > 1e-6);
        let r = *orthogonalize_9d(&raw).unwrap().matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonalize_fixes_rotations(r in rotation(), scale in 0.01..100.0f64) {
        let back = orthogonalize_9d(&NineD::from_matrix(&(r.matrix() * scale))).unwrap();
        prop_assert!(rotation_angle(&back, &r) < 1e-12);
    }

    #[test]
    fn rotation_angle_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = rotation_angle(&a, &b);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
        prop_assert!((ab - rotation_angle(&b, &a)).abs() < 1e-12);
        prop_assert!(ab <= rotation_angle(&a, &c) + rotation_angle(&c, &b) + 1e-9);
        prop_assert!(rotation_angle(&a, &a) < 1e-7);
    }

    #[test]
    fn exp_angle_matches_vector_norm(w in vec3(1.8)) {
        let r = Rotation::exp(&w);
        prop_assert!((rotation_angle(&r, &Rotation::identity()) - w.norm()).abs() < 1e-9);
    }

    #[test]
    fn rigid_inverse_round_trips(t in rigid(), p in vec3(5.0)) {
        prop_assert!(close(&t.inverse().apply(&t.apply(&p)), &p, 1e-12));
        prop_assert!(close(&t.compose(&t.inverse()).apply(&p), &p, 1e-12));
    }

    #[test]
    fn composition_applies_right_to_left(a in rigid(), b in rigid(), p in vec3(5.0)) {
        prop_assert!(close(&a.compose(&b).apply(&p), &a.apply(&b.apply(&p)), 1e-12));
    }

    #[test]
    fn similarity_group_laws(a in similarity(), b in similarity(), p in vec3(5.0)) {
        prop_assert!(close(&a.inverse().apply(&a.apply(&p)), &p, 1e-9));
        prop_assert!(close(&a.compose(&b).apply(&p), &a.apply(&b.apply(&p)), 1e-9));
        let expected = (a.rigid.rotation.apply(&p) + a.rigid.translation) * a.scale;
        prop_assert!(close(&a.apply(&p), &expected, 1e-12));
    }

    #[test]
    fn relative_pose_chains(a in rigid(), b in rigid(), p in vec3(5.0)) {
        // a ∘ rel(a, b) = b
        let rel = relative_pose(&a, &b);
        prop_assert!(close(&a.apply(&rel.apply(&p)), &b.apply(&p), 1e-12));
    }

    #[test]
    fn relative_metrics_are_strict(t in rigid(), dt in 0.0..0.1f64) {
        let moved = RigidTransform::new(t.rotation, t.translation + Vector3::new(dt, 0.0, 0.0));
        let thresholds = Thresholds::new(dt.max(1e-12), 1.0).unwrap();
        let r = relative_pose_metrics(&moved, &t, thresholds);
        prop_assert!((r.rte - dt).abs() < 1e-12);
        prop_assert!(r.rre < 1e-7);
        // an error equal to the threshold does not count as accurate
        if r.rte == thresholds.translation {
            prop_assert_eq!(r.rta, 0.0);
        }
    }

    #[test]
    fn project_inverts_unproject(
        fx in 100.0..900.0f64,
        cx in 10.0..100.0f64,
        uv in (0.0..110.0f64, 0.0..90.0f64),
        depth in 0.1..10.0f64,
    ) {
        let k = Intrinsics::new(fx, fx * 1.1, cx, cx * 0.8, 110, 90).unwrap();
        let c = k.normalize(uv.0, uv.1);
        let pts = unproject(
            &CoordMap::new(Grid::filled(1, 1, c)).unwrap(),
            &DepthMap::new(Grid::filled(1, 1, depth)),
        ).unwrap();
        let p = pts.point(0, 0).unwrap();
        prop_assert!((p.z - depth).abs() < 1e-15);
        let back = project(p, &k).unwrap();
        prop_assert!((back - Vector2::new(uv.0, uv.1)).norm() < 1e-9);
    }

    #[test]
    fn align_scale_is_equivariant(gt in point_map(12), c in 0.05..20.0f64, d in 0.05..20.0f64) {
        let pred = gt.map_points(|p| Vector3::new(p.y, p.z, p.x) + p * 0.5);
        let s = align_scale(&pred, &gt).unwrap();
        let scaled_pred = align_scale(&pred.map_points(|p| p * c), &gt).unwrap();
        let scaled_gt = align_scale(&pred, &gt.map_points(|p| p * d)).unwrap();
        prop_assert!((scaled_pred * c - s).abs() <= 1e-12 * s.abs().max(1.0));
        prop_assert!((scaled_gt - s * d).abs() <= 1e-12 * (s * d).abs().max(1.0));
    }

    #[test]
    fn point_loss_ignores_prediction_scale(gt in point_map(10), c in 0.05..20.0f64) {
        let pred = gt.map_points(|p| p + Vector3::new(0.1, -0.05, 0.02));
        let base = point_loss(&pred, &gt).unwrap();
        let scaled = point_loss(&pred.map_points(|p| p * c), &gt).unwrap();
        prop_assert!((base - scaled).abs() < 1e-12);
        prop_assert!(point_loss(&gt.map_points(|p| p * c), &gt).unwrap() < 1e-14);
    }

    #[test]
    fn bce_is_bounded_and_clamped(p in 0.0..=1.0f64, target in prop::bool::ANY) {
        let t = if target { 1.0 } else { 0.0 };
        let l = bce(p, t);
        prop_assert!(l >= 0.0);
        prop_assert!(l <= -BCE_EPS.ln() + 1e-12);
    }

    #[test]
    fn huber_is_continuous_at_delta(delta in 0.01..5.0f64) {
        let inside = huber(delta * (1.0 - 1e-9), delta);
        let outside = huber(delta * (1.0 + 1e-9), delta);
        prop_assert!((inside - outside).abs() < 1e-8 * delta.max(1.0));
        prop_assert!(huber(-delta * 3.0, delta) == huber(delta * 3.0, delta));
    }

    #[test]
    fn soft_argmax_of_a_symmetric_bump_is_its_center(cu in 20usize..44, cv in 16usize..32) {
        let center = Vector2::new(cu as f64, cv as f64);
        let hm = Heatmap::gaussian(48, 64, &Keypoints2D(vec![center]), 10.0, 100.0);
        let got = soft_argmax(&hm, 1.0).unwrap().0[0];
        prop_assert!((got - center).norm() < 1e-6);
    }

    #[test]
    fn raster_round_trips(
        (h, w, c, values) in (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(h, w, c)| {
            (Just(h), Just(w), Just(c), prop::collection::vec(-1e6..1e6f64, h * w * c))
        })
    ) {
        let bytes = encode_raster(h, w, c, Dtype::F64, &values);
        let r = decode_raster(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!((r.height, r.width, r.channels), (h, w, c));
        prop_assert_eq!(r.data, values.clone());
        let as_f32: Vec<f64> = values.iter().map(|v| *v as f32 as f64).collect();
        let r = decode_raster(&encode_raster(h, w, c, Dtype::F32, &values), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(r.data, as_f32);
    }

    #[test]
    fn raster_rejects_any_truncation(cut in 1usize..60) {
        let bytes = encode_raster(2, 3, 2, Dtype::F32, &[0.5; 12]);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_raster(&bytes[..bytes.len() - cut], std::path::Path::new("mem")).is_err());
    }

    #[test]
    fn ray_hits_lie_on_the_surface(
        origin in vec3(0.5),
        target in vec3(0.3),
        center in vec3(0.2),
        radius in 0.05..0.4f64,
        pose in rigid(),
        half in prop::array::uniform3(0.05..0.3f64),
    ) {
        let ray = Ray { origin: origin + Vector3::new(0.0, 0.0, 3.0), dir: target - origin - Vector3::new(0.0, 0.0, 3.0) };
        let local = RigidTransform::new(pose.rotation, center);
        let surfaces = [
            Surface::Sphere { center, radius },
            Surface::Capsule { a: center, b: center + Vector3::new(0.1, 0.2, -0.1), radius },
            Surface::Box { pose: local, half_extents: Vector3::from(half) },
            Surface::Plane { height: 0.1, bounds: Some([-0.5, -0.5, 0.5, 0.5]) },
        ];
        for s in surfaces {
            if let Some(t) = s.intersect(&ray) {
                prop_assert!(t > 0.0);
                prop_assert!(s.distance(&ray.at(t)) < 1e-12, "{:?} off by {}", s, s.distance(&ray.at(t)));
            }
        }
    }
}

use erpdepth::cubemap::Face;
use erpdepth::distortion::latitude_weights;
use erpdepth::losses::{sigmoid_to_depth, DepthMapping};
use erpdepth::metrics::{compute_metrics, EvalConfig};
use erpdepth::reprojection::reproject_point;
use erpdepth::sphere::{angles_to_pixel, angles_to_vector, pixel_to_angles, vector_to_angles};
use erpdepth::{DepthMap, ErpGrid, Pose, SphericalPoint};
use nalgebra::Vector3;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(1.0), vec3(2.0)).prop_map(|(w, t)| Pose::from_axis_angle(w, t))
}

proptest! {
    #[test]
    fn pixel_angle_round_trip(h in 1usize..300, fu in 0.0f64..1.0, fv in 0.0f64..1.0) {
        let g = ErpGrid::with_height(h).unwrap();
        let (u, v) = (fu * (2 * h) as f64 - 0.5, fv * h as f64 - 0.5);
        let (u2, v2) = angles_to_pixel(&pixel_to_angles(u, v, &g), &g);
        prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
    }

    #[test]
    fn vector_angle_round_trip(theta in -FRAC_PI_2..FRAC_PI_2, phi in -PI..PI, d in 0.01f64..100.0) {
        let p = SphericalPoint::new(theta, phi).unwrap();
        let c = angles_to_vector(&p, d).unwrap();
        let (q, d2) = vector_to_angles(&c).unwrap();
        let c2 = angles_to_vector(&q, d2).unwrap();
        prop_assert!((c2 - c).norm() <= 1e-9 * d);
    }

    #[test]
    fn compose_then_inverse_is_identity(a in pose(), p in vec3(5.0)) {
        let back = a.inverse().compose(&a).transform_point(&p);
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn reprojection_follows_pose_composition(a in pose(), b in pose(), theta in -1.4f64..1.4, phi in -PI..PI, d in 0.5f64..10.0) {
        let p = SphericalPoint::new(theta, phi).unwrap();
        let direct = angles_to_vector(&p, d).unwrap();
        let expected = a.compose(&b).transform_point(&direct);
        prop_assume!(expected.norm() > 1e-3 && b.transform_point(&direct).norm() > 1e-3);
        let (q1, d1) = reproject_point(&p, d, &b).unwrap();
        let (q2, d2) = reproject_point(&q1, d1, &a).unwrap();
        let got = angles_to_vector(&q2, d2).unwrap();
        prop_assert!((got - expected).norm() < 1e-9 * expected.norm().max(1.0));
    }

    #[test]
    fn latitude_weights_are_symmetric_and_bounded(h in 1usize..1024) {
        let w = latitude_weights(h);
        for v in 0..h {
            prop_assert!(w[v] > 0.0 && w[v] <= 1.0);
            prop_assert_eq!(w[v], w[h - 1 - v]);
        }
    }

    #[test]
    fn cubemap_face_projection_inverts_direction(d in vec3(1.0)) {
        prop_assume!(d.norm() > 1e-3);
        let f = Face::classify(&d);
        let (a, b) = f.project(&d);
        prop_assert!(a.abs() <= 1.0 + 1e-12 && b.abs() <= 1.0 + 1e-12);
        let r = f.direction(a, b);
        prop_assert!((r.normalize() - d.normalize()).norm() < 1e-12);
    }

    #[test]
    fn sigmoid_depth_is_monotone_within_range(s in 0.0f64..1.0, ds in 1e-6f64..0.5) {
        let m = DepthMapping::from_range(0.1, 100.0).unwrap();
        let s2 = (s + ds).min(1.0);
        let (d1, d2) = (sigmoid_to_depth(s, &m).unwrap(), sigmoid_to_depth(s2, &m).unwrap());
        prop_assert!(d2 <= d1);
        prop_assert!((0.1 - 1e-12..=100.0 + 1e-9).contains(&d1));
    }

    #[test]
    fn metric_deltas_are_ordered(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = ErpGrid::with_height(6).unwrap();
        let gt: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.5..20.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|d| d * rng.random_range(0.5..2.0)).collect();
        let m = compute_metrics(
            &DepthMap::new(g, pred).unwrap(),
            &DepthMap::new(g, gt).unwrap(),
            None,
            &EvalConfig::default(),
        )
        .unwrap();
        prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3 && m.delta3 <= 1.0);
        prop_assert!(m.abs_rel >= 0.0 && m.rmse >= 0.0 && m.n_valid == g.len());
    }
}

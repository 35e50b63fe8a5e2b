use proptest::prelude::*;

use marseg::align::Pose;
use marseg::bev::{pillarize, BevConfig};
use marseg::eval::Confusion;
use marseg::label::{compose_label, decompose_label, ClassTaxonomy, Point, PointCloud};
use marseg::mars::gated_inference;
use marseg::synth::{generate_sequence, random_scene, SceneParams};

fn tax() -> ClassTaxonomy {
    ClassTaxonomy::default_synthetic()
}

fn points(max: usize, reach: f64) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(
        (-reach..reach, -reach..reach, -2.0..2.0f64, 0.0..=1.0f64).prop_map(|(x, y, z, i)| Point::new(x, y, z, i)),
        0..max,
    )
}

fn grid() -> impl Strategy<Value = BevConfig> {
    (1usize..9, 1usize..9, 0.25..2.0f64).prop_map(|(h, w, c)| BevConfig::centered(h, w, c).unwrap())
}

proptest! {
    #[test]
    fn labels_round_trip_and_gate(semantic in 0u16..7, moving: bool) {
        let t = tax();
        match compose_label(semantic, moving, &t) {
            Ok(code) => {
                prop_assert!(!moving || t.is_movable(semantic));
                let l = decompose_label(code, &t).unwrap();
                prop_assert_eq!((l.semantic_id, l.moving), (semantic, moving));
            }
            Err(_) => prop_assert!(moving && !t.is_movable(semantic)),
        }
    }

    #[test]
    fn pillar_channels_stay_in_range(pts in points(60, 8.0), cfg in grid()) {
        let g = pillarize(&PointCloud::new(pts.clone(), 0), &cfg);
        let mut occupied = vec![false; cfg.num_pixels()];
        for p in &pts {
            if let Some(i) = cfg.pixel_index(p.x, p.y) {
                occupied[i] = true;
            }
        }
        let n = cfg.num_pixels();
        for i in 0..n {
            let v = [g.data[i], g.data[n + i], g.data[2 * n + i]];
            prop_assert!(v[0].abs() <= 1.0 && v[1].abs() <= 1.0 && v[2] >= 0.0);
            if !occupied[i] {
                prop_assert_eq!(v, [0.0; 3]);
            }
        }
    }

    #[test]
    fn intensity_channel_is_additive_and_order_free(a in points(40, 6.0), b in points(40, 6.0), cfg in grid()) {
        let n = cfg.num_pixels();
        let ga = pillarize(&PointCloud::new(a.clone(), 0), &cfg);
        let gb = pillarize(&PointCloud::new(b.clone(), 0), &cfg);
        let mut union = a.clone();
        union.extend(b.iter().copied());
        let gu = pillarize(&PointCloud::new(union.clone(), 0), &cfg);
        for i in 0..n {
            prop_assert!((gu.data[2 * n + i] - ga.data[2 * n + i] - gb.data[2 * n + i]).abs() < 1e-12);
        }
        union.reverse();
        let gr = pillarize(&PointCloud::new(union, 0), &cfg);
        for (x, y) in gr.data.iter().zip(&gu.data) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_inverse_undoes_pose(
        r in -3.0..3.0f64, p in -1.5..1.5f64, y in -3.0..3.0f64,
        t in prop::array::uniform3(-50.0..50.0f64),
        q in prop::array::uniform3(-20.0..20.0f64),
    ) {
        let pose = Pose::from_euler(r, p, y, t);
        prop_assert!(pose.validate().is_ok());
        let pt = Point::new(q[0], q[1], q[2], 0.5);
        let back = pose.inverse().apply(&pose.apply(&pt));
        prop_assert!((back.x - pt.x).abs() < 1e-9 && (back.y - pt.y).abs() < 1e-9 && (back.z - pt.z).abs() < 1e-9);
        let id = pose.compose(&pose.inverse());
        prop_assert!((id.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn gated_inference_never_moves_static_classes(
        logits in prop::collection::vec(-5.0..5.0f64, 7..70),
        motion_seed in prop::collection::vec(-5.0..5.0f64, 10),
    ) {
        let t = tax();
        let n = logits.len() / 7;
        let class = &logits[..n * 7];
        let motion: Vec<f64> = (0..n).map(|i| motion_seed[i % motion_seed.len()]).collect();
        let codes = gated_inference(class, &motion, &t).unwrap();
        prop_assert_eq!(codes.len(), n);
        for (i, &code) in codes.iter().enumerate() {
            let l = decompose_label(code, &t).unwrap();
            prop_assert!(!l.moving || t.is_movable(l.semantic_id));
            let row = &class[i * 7..(i + 1) * 7];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let argmax = row.iter().position(|&v| v == best).unwrap() as u16;
            prop_assert_eq!(l.semantic_id, argmax);
            prop_assert_eq!(l.moving, t.is_movable(argmax) && 1.0 / (1.0 + (-motion[i]).exp()) > 0.5);
        }
    }

    #[test]
    fn evaluation_ignores_point_order(pairs in prop::collection::vec((0usize..10, 0usize..10), 1..80), seed: u64) {
        let t = tax();
        let codes = t.valid_codes();
        let truth: Vec<u16> = pairs.iter().map(|p| codes[p.0]).collect();
        let pred: Vec<u16> = pairs.iter().map(|p| codes[p.1]).collect();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut a = Confusion::new(&t);
        a.add(&truth, &pred).unwrap();
        let mut b = Confusion::new(&t);
        let tp: Vec<u16> = order.iter().map(|&i| truth[i]).collect();
        let pp: Vec<u16> = order.iter().map(|&i| pred[i]).collect();
        b.add(&tp, &pp).unwrap();
        let (ra, rb) = (a.report(&t).unwrap(), b.report(&t).unwrap());
        prop_assert_eq!(&ra, &rb);
        prop_assert!(ra.iou.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_scenes_satisfy_their_invariants(seed: u64, frames in 1usize..4, points in 20usize..120) {
        let t = tax();
        let params = SceneParams { frames, extent: 12.0, points_per_frame: points, ..SceneParams::default() };
        let spec = random_scene(&params, seed).unwrap();
        prop_assert!(spec.validate(&t).is_ok());
        for o in &spec.objects {
            prop_assert!(o.size.iter().all(|&s| s > 0.0));
            if !t.is_movable(o.class_id) {
                prop_assert_eq!(o.velocity, [0.0, 0.0]);
            }
        }
        let seq = generate_sequence(&spec, seed).unwrap();
        prop_assert_eq!(seq.frames.len(), frames);
        for (i, f) in seq.frames.iter().enumerate() {
            prop_assert_eq!(f.frame_index as usize, i);
            let labels = f.labels.as_ref().unwrap();
            prop_assert_eq!(labels.len(), f.points.len());
            prop_assert!(f.points.iter().all(|p| p.is_valid() && (0.0..=1.0).contains(&p.intensity)));
            prop_assert!(labels.iter().all(|l| !l.moving || t.is_movable(l.semantic_id)));
        }
    }
}

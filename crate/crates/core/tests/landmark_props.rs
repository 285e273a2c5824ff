use maskface::landmark::{landmarks_to_json, parse_landmarks, ANCHOR_INDICES, NOSE_BRIDGE_TOP, CHIN_TIP};
use maskface::synth::{face_landmarks, rotate_about, FacePose};
use maskface::{estimate_tilt, extract_anchors, load_landmarks, save_landmarks, BBox, FaceLandmarks, Point, TiltBin};
use proptest::prelude::*;
use std::path::Path;

fn pose(cx: f64, cy: f64, scale: f64, roll: f64) -> FacePose {
    FacePose {
        center: Point::new(cx, cy),
        scale,
        roll_deg: roll,
    }
}

fn rotated(lm: &FaceLandmarks, center: Point, deg: f64) -> FaceLandmarks {
    let pts: Vec<Point> = lm.points().iter().map(|&p| rotate_about(p, center, deg)).collect();
    FaceLandmarks::new(lm.image_id(), BBox::enclosing(&pts), pts).unwrap()
}

fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

// Two-point angle against the downward vertical, written out separately
// from the library code.
fn oracle_angle(top: Point, chin: Point) -> f64 {
    let (dx, dy) = (chin.x - top.x, chin.y - top.y);
    let len = (dx * dx + dy * dy).sqrt();
    let cos = dy / len;
    let unsigned = cos.clamp(-1.0, 1.0).acos().to_degrees();
    if dx < 0.0 {
        -unsigned
    } else {
        unsigned
    }
}

#[test]
fn perturbed_fixture_matches_two_point_oracle() {
    for seed in 0..200u64 {
        let lm = face_landmarks("f", &pose(200.0, 200.0, 120.0, (seed as f64 * 7.3) % 140.0 - 70.0), 2.0, seed);
        let tilt = estimate_tilt(&lm).unwrap();
        let expect = oracle_angle(lm.point(NOSE_BRIDGE_TOP), lm.point(CHIN_TIP));
        assert!((tilt.angle_deg - expect).abs() < 1e-9, "seed {seed}: {} vs {expect}", tilt.angle_deg);
        assert_eq!(tilt.bin, TiltBin::from_angle(expect));
    }
}

#[test]
fn rotated_fixture_anchors_follow_rotation() {
    let lm = face_landmarks("f", &pose(150.0, 160.0, 100.0, 0.0), 0.0, 1);
    let center = Point::new(150.0, 160.0);
    let rot = rotated(&lm, center, 30.0);
    let a = extract_anchors(&lm).unwrap().to_array();
    let b = extract_anchors(&rot).unwrap().to_array();
    for (k, (&p, &q)) in a.iter().zip(&b).enumerate() {
        let expect = rotate_about(p, center, 30.0);
        assert!((expect - q).norm() < 1e-9, "anchor {k}");
        assert_eq!(q, rot.point(ANCHOR_INDICES[k]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tilt_is_rotation_equivariant(
        roll in -60.0f64..60.0,
        theta in -170.0f64..170.0,
        cx in -300.0f64..300.0,
        cy in -300.0f64..300.0,
        seed in any::<u64>(),
    ) {
        let lm = face_landmarks("f", &pose(200.0, 220.0, 90.0, roll), 1.0, seed);
        let before = estimate_tilt(&lm).unwrap().angle_deg;
        let after = estimate_tilt(&rotated(&lm, Point::new(cx, cy), theta)).unwrap().angle_deg;
        prop_assert!(wrap_deg(after - before - theta).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip_is_identity(
        rolls in prop::collection::vec(-40.0f64..40.0, 0..4),
        seed in any::<u64>(),
    ) {
        let faces: Vec<FaceLandmarks> = rolls
            .iter()
            .enumerate()
            .map(|(i, &r)| face_landmarks("img.png", &pose(100.0 + 150.0 * i as f64, 120.0, 80.0, r), 1.5, seed ^ i as u64))
            .collect();
        let text = landmarks_to_json("img.png", &faces);
        let back = parse_landmarks(&text, Path::new("mem.json")).unwrap();
        prop_assert_eq!(back, faces);
    }

    #[test]
    fn anchors_do_not_depend_on_face_order(
        rolls in prop::collection::vec(-40.0f64..40.0, 2..5),
        seed in any::<u64>(),
        shift in 1usize..4,
    ) {
        let faces: Vec<FaceLandmarks> = rolls
            .iter()
            .enumerate()
            .map(|(i, &r)| face_landmarks("g", &pose(100.0 + 150.0 * i as f64, 120.0, 80.0, r), 1.0, seed ^ i as u64))
            .collect();
        let mut permuted = faces.clone();
        permuted.rotate_left(shift % faces.len());
        for face in &faces {
            let pos = permuted.iter().position(|f| f == face).unwrap();
            prop_assert_eq!(
                extract_anchors(face).unwrap().to_array(),
                extract_anchors(&permuted[pos]).unwrap().to_array()
            );
        }
    }
}

#[test]
fn save_then_load_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("group.json");
    let faces: Vec<FaceLandmarks> = (0..3)
        .map(|i| face_landmarks("group.png", &pose(80.0 + 160.0 * i as f64, 100.0, 70.0, 10.0 * i as f64), 0.7, i))
        .collect();
    save_landmarks(&path, "group.png", &faces).unwrap();
    assert_eq!(load_landmarks(&path).unwrap(), faces);
}

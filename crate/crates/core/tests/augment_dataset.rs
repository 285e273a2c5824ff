use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use maskface::augment::MANIFEST_FILE;
use maskface::maskwarp::builtin_library;
use maskface::synth::{face_landmarks, render_faces, write_face_fixture, FacePose};
use maskface::{
    mask_dataset, mask_image, AugmentationManifest, DatasetJob, MaskPolicy, MaskType, Point, SidecarLandmarks,
    SplitMix64, Status,
};

fn run(root: &Path, out: &Path, policy: &MaskPolicy, workers: usize) -> AugmentationManifest {
    let job = DatasetJob { root, out, workers };
    mask_dataset(&job, &builtin_library(), policy, &SidecarLandmarks).unwrap()
}

fn files_under(dir: &Path) -> BTreeSet<String> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"))
        .collect()
}

#[test]
fn hundred_images_with_eight_faceless() {
    let tmp = tempfile::tempdir().unwrap();
    let (root, out) = (tmp.path().join("in"), tmp.path().join("out"));
    write_face_fixture(&root, 100, 96, 5, 12).unwrap();
    let policy = MaskPolicy {
        seed: 3,
        ..MaskPolicy::default()
    };
    let manifest = run(&root, &out, &policy, 4);

    assert_eq!(manifest.count(Status::SkippedNoFace), 8);
    assert_eq!(manifest.count(Status::Masked), 92);
    assert_eq!(manifest.count(Status::OriginalKept), 100);

    let mut produced = files_under(&out);
    assert!(produced.remove(MANIFEST_FILE));
    assert_eq!(produced.len(), 192);
    let named: BTreeSet<String> = manifest.output_files().into_iter().map(String::from).collect();
    assert_eq!(produced, named, "every output file is named by the manifest and vice versa");
    assert!((produced.len() as f64 / 100.0 - 1.92).abs() < 1e-12);

    let sources: Vec<&str> = manifest.rows.iter().map(|r| r.source_path.as_str()).collect();
    assert!(sources.windows(2).all(|w| w[0] <= w[1]), "rows sorted by source path");
    assert_eq!(sources.iter().collect::<BTreeSet<_>>().len(), 100);
    assert_eq!(AugmentationManifest::read(out.join(MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn ten_images_give_twenty_outputs_and_repeat_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("in");
    write_face_fixture(&root, 10, 96, 8, 0).unwrap();
    let policy = MaskPolicy {
        seed: 7,
        ..MaskPolicy::default()
    };
    let first = tmp.path().join("one");
    let second = tmp.path().join("two");
    let manifest = run(&root, &first, &policy, 1);
    run(&root, &second, &policy, 3);

    assert_eq!(manifest.rows.len(), 20);
    assert_eq!(files_under(&first).len(), 21);
    for rel in files_under(&first) {
        assert_eq!(fs::read(first.join(&rel)).unwrap(), fs::read(second.join(&rel)).unwrap(), "{rel}");
    }
}

#[test]
fn unreadable_image_is_skipped_and_job_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("in");
    write_face_fixture(&root, 4, 96, 1, 0).unwrap();
    fs::write(root.join("a").join("broken.png"), b"not a png").unwrap();
    let manifest = run(&root, &tmp.path().join("out"), &MaskPolicy::default(), 2);
    assert_eq!(manifest.count(Status::SkippedUnreadable), 1);
    assert_eq!(manifest.count(Status::Masked), 4);
}

// Independent SplitMix64 for replaying draws.
struct Replay(u64);

impl Replay {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
}

fn two_face_image() -> (image::RgbImage, Vec<maskface::FaceLandmarks>) {
    let poses = [
        FacePose {
            center: Point::new(60.0, 70.0),
            scale: 60.0,
            roll_deg: 5.0,
        },
        FacePose {
            center: Point::new(180.0, 70.0),
            scale: 60.0,
            roll_deg: -20.0,
        },
    ];
    let img = render_faces(240, 140, &poses, 1);
    let faces = poses.iter().map(|p| face_landmarks("two.png", p, 0.0, 2)).collect();
    (img, faces)
}

#[test]
fn seed_42_mask_types_replay_by_hand() {
    let (img, faces) = two_face_image();
    let policy = MaskPolicy::default();
    let (_, records) = mask_image(&img, &faces, &builtin_library(), &policy, &mut SplitMix64::new(42)).unwrap();

    // Per face: one draw picks the type by multiply-shift, one draw decides
    // the pattern (never taken at probability 0).
    let mut r = Replay(42);
    let mut expected = Vec::new();
    for _ in 0..2 {
        let k = ((r.next() as u128 * 4) >> 64) as usize;
        expected.push(policy.candidate_types[k]);
        r.next();
    }
    let drawn: Vec<MaskType> = records.iter().map(|rec| rec.mask_type.unwrap()).collect();
    assert_eq!(drawn, expected);
    assert!(records.iter().all(|rec| rec.status == Status::Masked));
}

#[test]
fn mask_types_are_uniform() {
    let pose = FacePose {
        center: Point::new(24.0, 26.0),
        scale: 26.0,
        roll_deg: 0.0,
    };
    let img = render_faces(48, 52, &[pose], 0);
    let faces = vec![face_landmarks("u.png", &pose, 0.0, 0)];
    let lib = builtin_library();
    let policy = MaskPolicy::default();
    let n = 10_000;
    let mut counts = [0usize; 4];
    for i in 0..n {
        let seed = maskface::augment::image_stream_seed(11, &format!("img_{i}.png"));
        let (_, recs) = mask_image(&img, &faces, &lib, &policy, &mut SplitMix64::new(seed)).unwrap();
        let ty = recs[0].mask_type.unwrap();
        counts[policy.candidate_types.iter().position(|&t| t == ty).unwrap()] += 1;
    }
    let expect = n as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99th percentile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 11.345, "chi2 {chi2} counts {counts:?}");
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() <= 0.02);
    }
}

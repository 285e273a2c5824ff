use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use image::{Rgb, RgbImage};
use maskface::maskwarp::builtin_template;
use maskface::synth::{face_landmarks, FacePose};
use maskface::{
    blend, cluster_identities, estimate_transform, extract_anchors, max_accuracy_threshold, mine_triplets,
    threshold_at_far, warp_mask, Embedding, Label, MaskType, MiningMode, Point, ScoredPair, ThresholdGrid, TiltBin,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face_anchors() -> maskface::FaceAnchors {
    let pose = FacePose {
        center: Point::new(256.0, 240.0),
        scale: 260.0,
        roll_deg: 8.0,
    };
    extract_anchors(&face_landmarks("bench", &pose, 1.0, 3)).unwrap()
}

fn embeddings(n: usize, dim: usize, ids: u32, seed: u64) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Embedding::normalized(v, i as u32 % ids, i as u64, false).unwrap()
        })
        .collect()
}

fn geometry(c: &mut Criterion) {
    let tpl = builtin_template(MaskType::Cloth, TiltBin::Front);
    let face = face_anchors();
    c.bench_function("estimate_transform", |b| {
        b.iter(|| estimate_transform(black_box(tpl.anchors()), black_box(&face), 4.0).unwrap())
    });

    let fit = estimate_transform(tpl.anchors(), &face, 4.0).unwrap();
    let canvas = RgbImage::from_pixel(512, 512, Rgb([120, 110, 100]));
    c.bench_function("warp_mask_512", |b| {
        b.iter(|| warp_mask(black_box(&tpl), black_box(&fit.transform), (512, 512)).unwrap())
    });
    let warped = warp_mask(&tpl, &fit.transform, (512, 512)).unwrap();
    c.bench_function("blend_512", |b| b.iter(|| blend(black_box(&canvas), black_box(&warped)).unwrap()));
}

fn mining(c: &mut Criterion) {
    let mut group = c.benchmark_group("mine_triplets");
    for n in [32usize, 128] {
        let batch = embeddings(n, 128, (n / 4) as u32, 1);
        for mode in [MiningMode::All, MiningMode::SemiHard] {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &batch, |b, batch| {
                b.iter(|| mine_triplets(black_box(batch), mode).unwrap())
            });
        }
    }
    group.finish();
}

fn threshold_sweep(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<ScoredPair> = (0..20_000)
        .map(|i| {
            if i % 2 == 0 {
                ScoredPair::new(rng.random_range(0.0..2.5), Label::Positive)
            } else {
                ScoredPair::new(rng.random_range(1.0..4.0), Label::Negative)
            }
        })
        .collect();
    let grid = ThresholdGrid::default();
    c.bench_function("max_accuracy_threshold_20k", |b| {
        b.iter(|| max_accuracy_threshold(black_box(&pairs), &grid).unwrap())
    });
    c.bench_function("threshold_at_far_20k", |b| {
        b.iter(|| threshold_at_far(black_box(&pairs), 0.001, &grid, Default::default()).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let emb = embeddings(300, 32, 40, 3);
    c.bench_function("cluster_identities_300", |b| {
        b.iter(|| cluster_identities(black_box(&emb), 0.8).unwrap())
    });
}

criterion_group!(benches, geometry, mining, threshold_sweep, clustering);
criterion_main!(benches);

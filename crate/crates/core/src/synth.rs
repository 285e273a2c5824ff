//! Synthetic fixtures: a parametric 68-point face, a toy face renderer and
//! parametric identity features. Used to build the shipped mask templates,
//! test fixtures and the desk-scale recognition experiments.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embed::Sample;
use crate::error::{Error, Result};
use crate::landmark::{save_landmarks, BBox, FaceLandmarks, Point, LANDMARK_COUNT};

/// Mean 68-point shape in a unit face frame: origin near the face center,
/// face width 1, y down.
pub fn canonical_face() -> [Point; LANDMARK_COUNT] {
    use std::f64::consts::PI;
    let mut p = [Point::origin(); LANDMARK_COUNT];
    for (t, slot) in p.iter_mut().take(17).enumerate() {
        let th = PI * t as f64 / 16.0;
        *slot = Point::new(-0.5 * th.cos(), -0.1 + 0.65 * th.sin());
    }
    for i in 0..5 {
        let lift = 0.04 * (PI * i as f64 / 4.0).sin();
        p[17 + i] = Point::new(-0.38 + 0.075 * i as f64, -0.28 - lift);
        p[22 + i] = Point::new(0.08 + 0.075 * i as f64, -0.28 - lift);
    }
    for i in 0..4 {
        p[27 + i] = Point::new(0.0, -0.2 + 0.08 * i as f64);
    }
    for i in 0..5 {
        let bump = 0.015 * (2.0 - (i as f64 - 2.0).abs());
        p[31 + i] = Point::new(-0.1 + 0.05 * i as f64, 0.1 + bump);
    }
    let ellipse = |cx: f64, cy: f64, a: f64, b: f64, phi: f64| {
        Point::new(cx + a * phi.cos(), cy - b * phi.sin())
    };
    for k in 0..6 {
        let phi = PI - k as f64 * PI / 3.0;
        p[36 + k] = ellipse(-0.2, -0.16, 0.08, 0.035, phi);
        p[42 + k] = ellipse(0.2, -0.16, 0.08, 0.035, phi);
    }
    for k in 0..12 {
        p[48 + k] = ellipse(0.0, 0.3, 0.18, 0.07, PI - k as f64 * PI / 6.0);
    }
    for k in 0..8 {
        p[60 + k] = ellipse(0.0, 0.3, 0.11, 0.03, PI - k as f64 * PI / 4.0);
    }
    p
}

/// Rotate `v` by `deg` in image coordinates so that the downward unit vector
/// gains a positive tilt of `deg` (chin toward +x).
pub fn rotate(v: Point, deg: f64) -> Point {
    let (s, c) = deg.to_radians().sin_cos();
    Point::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

/// Rotate `p` about `center` by `deg` (same convention as [`rotate`]).
pub fn rotate_about(p: Point, center: Point, deg: f64) -> Point {
    let r = rotate(Point::from(p - center), deg);
    Point::new(center.x + r.x, center.y + r.y)
}

/// Placement of one synthetic face in an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePose {
    /// Pixel position of the face-frame origin.
    pub center: Point,
    /// Pixels per face-frame unit (roughly the face width).
    pub scale: f64,
    pub roll_deg: f64,
}

impl FacePose {
    pub fn to_image(&self, q: Point) -> Point {
        let r = rotate(q, self.roll_deg);
        Point::new(self.center.x + self.scale * r.x, self.center.y + self.scale * r.y)
    }

    pub fn to_face(&self, p: Point) -> Point {
        let d = Point::new((p.x - self.center.x) / self.scale, (p.y - self.center.y) / self.scale);
        rotate(d, -self.roll_deg)
    }
}

/// Landmarks of a synthetic face, with optional isotropic Gaussian jitter
/// (pixels) drawn from `seed`.
pub fn face_landmarks(image_id: &str, pose: &FacePose, jitter_px: f64, seed: u64) -> FaceLandmarks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter_px.max(0.0)).expect("finite jitter");
    let points: Vec<Point> = canonical_face()
        .iter()
        .map(|q| {
            let p = pose.to_image(*q);
            if jitter_px > 0.0 {
                Point::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();
    let mut bbox = BBox::enclosing(&points);
    let pad = 0.05 * bbox.width.max(bbox.height);
    bbox.x -= pad;
    bbox.y -= pad;
    bbox.width += 2.0 * pad;
    bbox.height += 2.0 * pad;
    FaceLandmarks::new(image_id, bbox, points).expect("synthetic landmarks are valid")
}

fn inside_ellipse(q: Point, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let dx = (q.x - cx) / a;
    let dy = (q.y - cy) / b;
    dx * dx + dy * dy <= 1.0
}

/// Draw cartoon faces: head, eyes, brows, nose and mouth over a gradient.
pub fn render_faces(width: u32, height: u32, poses: &[FacePose], seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_top = [rng.random_range(90..200u8), rng.random_range(90..200u8), rng.random_range(90..200u8)];
    let skins: Vec<[u8; 3]> = poses
        .iter()
        .map(|_| {
            let base = rng.random_range(0.45..1.0f64);
            [
                (235.0 * base) as u8,
                (190.0 * base) as u8,
                (160.0 * base) as u8,
            ]
        })
        .collect();
    RgbImage::from_fn(width, height, |x, y| {
        let p = Point::new(x as f64, y as f64);
        let mut color = {
            let t = y as f64 / height.max(1) as f64;
            Rgb(bg_top.map(|c| (c as f64 * (1.0 - 0.4 * t)) as u8))
        };
        for (pose, skin) in poses.iter().zip(&skins) {
            let q = pose.to_face(p);
            if !inside_ellipse(q, 0.0, 0.05, 0.54, 0.72) {
                continue;
            }
            color = Rgb(*skin);
            let eye = inside_ellipse(q, -0.2, -0.16, 0.08, 0.035) || inside_ellipse(q, 0.2, -0.16, 0.08, 0.035);
            let brow = (q.y + 0.28).abs() < 0.02 && (0.08..0.38).contains(&q.x.abs());
            if eye || brow {
                color = Rgb([40, 30, 30]);
            } else if inside_ellipse(q, 0.0, 0.3, 0.18, 0.07) {
                color = Rgb([170, 60, 60]);
            } else if q.x.abs() < 0.015 && (-0.2..0.1).contains(&q.y) {
                color = Rgb(skin.map(|c| (c as f64 * 0.8) as u8));
            }
        }
        color
    })
}

/// Write `count` single-face PNGs with landmark sidecars, spread over two
/// subdirectories. Every `no_face_every`-th image (1-based, 0 disables)
/// gets no sidecar and so counts as having no detected face.
pub fn write_face_fixture(dir: &Path, count: usize, size: u32, seed: u64, no_face_every: usize) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let sub = dir.join(if i % 2 == 0 { "a" } else { "b" });
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let s = size as f64;
        let pose = FacePose {
            center: Point::new(s * rng.random_range(0.45..0.55), s * rng.random_range(0.4..0.5)),
            scale: s * rng.random_range(0.5..0.6),
            roll_deg: rng.random_range(-35.0..35.0),
        };
        let name = format!("img_{i:03}");
        let path = sub.join(format!("{name}.png"));
        let image_seed = rng.random::<u64>();
        render_faces(size, size, &[pose], image_seed).save(&path)?;
        if no_face_every == 0 || (i + 1) % no_face_every != 0 {
            let lm = face_landmarks(&name, &pose, 0.3, image_seed);
            save_landmarks(path.with_extension("json"), &format!("{name}.png"), &[lm])?;
        }
        written.push(path);
    }
    Ok(written)
}

/// Parametric identity features standing in for face images.
///
/// Each identity owns a Gaussian prototype; a sample is prototype plus
/// noise. The trailing `occluded_dims` coordinates play the role of the
/// lower face: [`FeatureModel::occlude`] replaces them with a fixed,
/// identity-independent signature, the way a mask hides the mouth and nose.
#[derive(Debug, Clone)]
pub struct FeatureModel {
    pub dim: usize,
    pub occluded_dims: usize,
    pub noise: f64,
    mask_signature: Vec<f64>,
    mask_noise: f64,
}

impl FeatureModel {
    pub fn new(dim: usize, occluded_dims: usize, noise: f64, mask_strength: f64, seed: u64) -> Self {
        assert!(occluded_dims <= dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_736b);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mask_signature = (0..occluded_dims)
            .map(|_| mask_strength * normal.sample(&mut rng))
            .collect();
        FeatureModel {
            dim,
            occluded_dims,
            noise,
            mask_signature,
            mask_noise: 0.1,
        }
    }

    /// `identities` prototypes drawn from `seed`.
    pub fn prototypes(&self, identities: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..identities)
            .map(|_| (0..self.dim).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    }

    /// `per_identity` noisy samples per prototype; identity labels start at
    /// `first_identity`, source ids at `first_source`.
    pub fn sample(
        &self,
        prototypes: &[Vec<f64>],
        per_identity: usize,
        first_identity: u32,
        first_source: u64,
        seed: u64,
    ) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.noise).expect("finite noise");
        let mut out = Vec::with_capacity(prototypes.len() * per_identity);
        let mut source = first_source;
        for (k, proto) in prototypes.iter().enumerate() {
            for _ in 0..per_identity {
                let input = proto.iter().map(|v| v + normal.sample(&mut rng)).collect();
                out.push(Sample {
                    input,
                    identity: first_identity + k as u32,
                    source,
                    masked: false,
                });
                source += 1;
            }
        }
        out
    }

    /// Clean samples of `identities` fresh prototypes plus their masked
    /// twins (same identity and source). Sources start at
    /// `first_identity * 1_000_000`, so splits with disjoint identity ranges
    /// never share a source.
    pub fn clean_and_masked(
        &self,
        identities: usize,
        per_identity: usize,
        first_identity: u32,
        seed: u64,
    ) -> (Vec<Sample>, Vec<Sample>) {
        let protos = self.prototypes(identities, seed);
        let first_source = first_identity as u64 * 1_000_000;
        let clean = self.sample(&protos, per_identity, first_identity, first_source, seed.wrapping_add(1));
        let masked = clean.iter().map(|s| self.occlude(s, seed.wrapping_add(2))).collect();
        (clean, masked)
    }

    /// The occluded counterpart of a sample: same identity and source, with
    /// the trailing block replaced by the mask signature plus a little noise.
    pub fn occlude(&self, s: &Sample, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ s.source.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let normal = Normal::new(0.0, self.mask_noise).expect("finite noise");
        let start = self.dim - self.occluded_dims;
        let mut input = s.input.clone();
        for (i, v) in input[start..].iter_mut().enumerate() {
            *v = self.mask_signature[i] + normal.sample(&mut rng);
        }
        Sample {
            input,
            identity: s.identity,
            source: s.source,
            masked: true,
        }
    }
}

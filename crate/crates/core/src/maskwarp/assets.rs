//! Procedurally drawn shipped assets: 5 mask types x 3 tilt bins, 24
//! tileable patterns and a small color palette.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage, Rgba, RgbaImage};

use super::{MaskLibrary, MaskTemplate, MaskType};
use crate::landmark::{TiltBin, ANCHOR_INDICES};
use crate::synth::{canonical_face, rotate, FacePose};
use crate::landmark::Point;

const CANVAS: u32 = 288;
const FACE_SCALE: f64 = 180.0;
/// Face-frame point placed at the canvas center.
const MASK_CENTER: (f64, f64) = (0.0, 0.17);
const BIN_ROLL_DEG: f64 = 25.0;
const PATTERN_SIZE: u32 = 32;

struct Outline {
    /// Jaw-arc scale relative to the canonical jaw.
    spread: f64,
    /// Jaw-arc start angle from horizontal, radians.
    start: f64,
    /// y of the bezier control point shaping the top edge.
    top_control: f64,
}

fn outline(ty: MaskType) -> Outline {
    use std::f64::consts::PI;
    match ty {
        MaskType::SurgicalGreen | MaskType::SurgicalBlue => Outline {
            spread: 1.04,
            start: PI / 10.0,
            top_control: -0.42,
        },
        MaskType::N95 => Outline {
            spread: 0.98,
            start: PI / 12.0,
            top_control: -0.48,
        },
        MaskType::Cloth => Outline {
            spread: 1.08,
            start: PI / 14.0,
            top_control: -0.40,
        },
        MaskType::Gas => Outline {
            spread: 1.1,
            start: PI / 16.0,
            top_control: -0.44,
        },
    }
}

fn silhouette(o: &Outline) -> Vec<Point> {
    use std::f64::consts::PI;
    const ARC: usize = 32;
    const TOP: usize = 16;
    let mut poly = Vec::with_capacity(ARC + TOP + 1);
    for i in 0..=ARC {
        let th = o.start + (PI - 2.0 * o.start) * i as f64 / ARC as f64;
        poly.push(Point::new(-0.5 * o.spread * th.cos(), -0.1 + 0.65 * o.spread * th.sin()));
    }
    let right = poly[ARC];
    let left = poly[0];
    let ctrl = Point::new(0.0, o.top_control);
    for i in 1..TOP {
        let t = i as f64 / TOP as f64;
        let a = (1.0 - t) * (1.0 - t);
        let b = 2.0 * t * (1.0 - t);
        let c = t * t;
        poly.push(Point::new(
            a * right.x + b * ctrl.x + c * left.x,
            a * right.y + b * ctrl.y + c * left.y,
        ));
    }
    poly
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn base_color(ty: MaskType) -> [f64; 3] {
    match ty {
        MaskType::SurgicalGreen => [150.0, 205.0, 175.0],
        MaskType::SurgicalBlue => [135.0, 185.0, 225.0],
        MaskType::N95 => [238.0, 238.0, 232.0],
        MaskType::Cloth => [70.0, 72.0, 85.0],
        MaskType::Gas => [95.0, 98.0, 100.0],
    }
}

fn near_circle(q: Point, cx: f64, cy: f64, r: f64) -> bool {
    (q.x - cx).powi(2) + (q.y - cy).powi(2) <= r * r
}

fn texel(ty: MaskType, q: Point) -> [u8; 3] {
    let mut shade = 1.0 - 0.18 * ((q.y + 0.2) / 0.8).clamp(0.0, 1.0) - 0.1 * (q.x / 0.55).powi(2);
    let mut color = base_color(ty);
    match ty {
        MaskType::SurgicalGreen | MaskType::SurgicalBlue => {
            if (-0.05..0.4).contains(&q.y) && (q.y + 0.05).rem_euclid(0.12) < 0.015 {
                shade *= 0.85;
            }
        }
        MaskType::N95 => {
            if q.x.abs() < 0.008 {
                shade *= 0.85;
            }
        }
        MaskType::Cloth => {
            if ((q.x * 120.0).floor() + (q.y * 120.0).floor()).rem_euclid(2.0) == 1.0 {
                shade *= 0.93;
            }
        }
        MaskType::Gas => {
            if near_circle(q, -0.2, 0.3, 0.1) || near_circle(q, 0.2, 0.3, 0.1) {
                color = [40.0, 40.0, 42.0];
            } else if near_circle(q, 0.0, 0.38, 0.06) {
                color = [60.0, 62.0, 64.0];
            }
        }
    }
    color.map(|c| (c * shade).round().clamp(0.0, 255.0) as u8)
}

fn bin_roll(bin: TiltBin) -> f64 {
    match bin {
        TiltBin::Left => -BIN_ROLL_DEG,
        TiltBin::Front => 0.0,
        TiltBin::Right => BIN_ROLL_DEG,
    }
}

/// Template-space pose: face frame to canvas pixels.
fn template_pose(bin: TiltBin) -> FacePose {
    let c = CANVAS as f64 / 2.0;
    let m = rotate(Point::new(MASK_CENTER.0, MASK_CENTER.1), bin_roll(bin));
    FacePose {
        center: Point::new(c - FACE_SCALE * m.x, c - FACE_SCALE * m.y),
        scale: FACE_SCALE,
        roll_deg: bin_roll(bin),
    }
}

pub fn builtin_template(ty: MaskType, bin: TiltBin) -> MaskTemplate {
    let pose = template_pose(bin);
    let poly = silhouette(&outline(ty));
    let img = RgbaImage::from_fn(CANVAS, CANVAS, |x, y| {
        let q = pose.to_face(Point::new(x as f64, y as f64));
        if point_in_polygon(q, &poly) {
            let [r, g, b] = texel(ty, q);
            Rgba([r, g, b, 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    });
    let face = canonical_face();
    let anchors = ANCHOR_INDICES.map(|i| pose.to_image(face[i]));
    MaskTemplate::new(ty, bin, img, anchors).expect("built-in template is valid")
}

const PALETTES: [(&str, [u8; 3], [u8; 3]); 4] = [
    ("red", [200, 40, 40], [245, 240, 230]),
    ("navy", [25, 40, 90], [230, 190, 60]),
    ("green", [30, 120, 60], [20, 20, 20]),
    ("pink", [240, 130, 170], [150, 150, 150]),
];

const MOTIFS: [&str; 6] = ["stripes", "vstripes", "diagonal", "checks", "dots", "grid"];

fn motif_on(motif: &str, x: u32, y: u32) -> bool {
    match motif {
        "stripes" => (y / 4) % 2 == 0,
        "vstripes" => (x / 4) % 2 == 0,
        "diagonal" => ((x + y) / 4) % 2 == 0,
        "checks" => (x / 8 + y / 8) % 2 == 0,
        "dots" => {
            let (dx, dy) = ((x % 8) as i32 - 4, (y % 8) as i32 - 4);
            dx * dx + dy * dy <= 5
        }
        "grid" => x % 8 == 0 || y % 8 == 0,
        _ => false,
    }
}

/// 24 tileable 32x32 patterns keyed `<motif>_<palette>`.
pub fn builtin_patterns() -> BTreeMap<String, RgbImage> {
    let mut out = BTreeMap::new();
    for motif in MOTIFS {
        for (pal, fg, bg) in PALETTES {
            let img = RgbImage::from_fn(PATTERN_SIZE, PATTERN_SIZE, |x, y| {
                Rgb(if motif_on(motif, x, y) { fg } else { bg })
            });
            out.insert(format!("{motif}_{pal}"), img);
        }
    }
    out
}

pub fn builtin_colors() -> BTreeMap<String, [u8; 3]> {
    [
        ("red", [192, 57, 43]),
        ("blue", [46, 134, 222]),
        ("black", [30, 30, 30]),
        ("white", [245, 245, 245]),
        ("yellow", [241, 196, 15]),
        ("purple", [142, 68, 173]),
        ("pink", [253, 121, 168]),
        ("gray", [127, 140, 141]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn builtin_library() -> MaskLibrary {
    let templates = MaskType::ALL
        .iter()
        .flat_map(|&ty| TiltBin::ALL.map(|bin| builtin_template(ty, bin)))
        .collect();
    MaskLibrary::new(templates, builtin_patterns(), builtin_colors()).expect("built-in library is complete")
}

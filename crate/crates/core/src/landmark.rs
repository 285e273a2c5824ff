//! 68-point facial landmarks, face tilt and the six mask anchors.
//!
//! Landmarks follow the iBUG 300-W convention (0-based): 0..=16 jaw line,
//! 17..=26 brows, 27..=35 nose, 36..=47 eyes, 48..=67 mouth. Image
//! coordinates have their origin at the top-left with y growing downward.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

pub const LANDMARK_COUNT: usize = 68;

pub const NOSE_BRIDGE_TOP: usize = 27;
pub const NOSE_BRIDGE: usize = 28;
pub const CHIN_TIP: usize = 8;
pub const UPPER_LEFT_JAW: usize = 2;
pub const UPPER_RIGHT_JAW: usize = 14;
pub const LOWER_LEFT_JAW: usize = 5;
pub const LOWER_RIGHT_JAW: usize = 11;

/// Landmark indices feeding [`FaceAnchors`], in anchor order.
pub const ANCHOR_INDICES: [usize; 6] = [
    NOSE_BRIDGE,
    CHIN_TIP,
    UPPER_LEFT_JAW,
    UPPER_RIGHT_JAW,
    LOWER_LEFT_JAW,
    LOWER_RIGHT_JAW,
];

/// Faces within this many degrees of upright use the frontal templates.
pub const FRONT_TILT_LIMIT_DEG: f64 = 15.0;

/// Axis-aligned face box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    /// Smallest box containing `points`.
    pub fn enclosing(points: &[Point]) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        BBox {
            x: min_x,
            y: min_y,
            width: max_x - min_x,
            height: max_y - min_y,
        }
    }

    /// Whether `p` lies inside the box grown by half its size on every side.
    fn contains_with_slack(&self, p: &Point) -> bool {
        let (sx, sy) = (0.5 * self.width, 0.5 * self.height);
        p.x >= self.x - sx
            && p.x <= self.x + self.width + sx
            && p.y >= self.y - sy
            && p.y <= self.y + self.height + sy
    }
}

/// One detected face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLandmarks {
    image_id: String,
    bbox: BBox,
    points: Vec<Point>,
}

impl FaceLandmarks {
    pub fn new(image_id: impl Into<String>, bbox: BBox, points: Vec<Point>) -> Result<Self> {
        Self::validated(image_id.into(), bbox, points, 0)
    }

    fn validated(image_id: String, bbox: BBox, points: Vec<Point>, face: usize) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Validation(format!(
                "face {face}: expected {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::Validation(format!(
                "face {face}: point {i} has a non-finite coordinate"
            )));
        }
        let box_ok = [bbox.x, bbox.y, bbox.width, bbox.height]
            .iter()
            .all(|v| v.is_finite());
        if !box_ok || bbox.width <= 0.0 || bbox.height <= 0.0 {
            return Err(Error::Validation(format!(
                "face {face}: bbox must have positive finite width and height"
            )));
        }
        if let Some(i) = points.iter().position(|p| !bbox.contains_with_slack(p)) {
            return Err(Error::Validation(format!(
                "face {face}: point {i} lies outside the face box"
            )));
        }
        Ok(FaceLandmarks {
            image_id,
            bbox,
            points,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TiltBin {
    Left,
    Front,
    Right,
}

impl TiltBin {
    pub const ALL: [TiltBin; 3] = [TiltBin::Left, TiltBin::Front, TiltBin::Right];

    pub fn from_angle(angle_deg: f64) -> Self {
        if angle_deg < -FRONT_TILT_LIMIT_DEG {
            TiltBin::Left
        } else if angle_deg > FRONT_TILT_LIMIT_DEG {
            TiltBin::Right
        } else {
            TiltBin::Front
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TiltBin::Left => "LEFT",
            TiltBin::Front => "FRONT",
            TiltBin::Right => "RIGHT",
        }
    }
}

impl fmt::Display for TiltBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TiltBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LEFT" => Ok(TiltBin::Left),
            "FRONT" => Ok(TiltBin::Front),
            "RIGHT" => Ok(TiltBin::Right),
            _ => Err(Error::Validation(format!(
                "unknown tilt bin {s:?}; expected LEFT, FRONT or RIGHT"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub bin: TiltBin,
    /// Signed angle of the nose-bridge to chin line against the image
    /// vertical; positive when the chin sits toward increasing x.
    pub angle_deg: f64,
}

/// The six points that drive mask placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceAnchors {
    pub nose_bridge: Point,
    pub chin_tip: Point,
    pub upper_left_jaw: Point,
    pub upper_right_jaw: Point,
    pub lower_left_jaw: Point,
    pub lower_right_jaw: Point,
}

impl FaceAnchors {
    pub fn from_array(p: [Point; 6]) -> Result<Self> {
        let anchors = FaceAnchors {
            nose_bridge: p[0],
            chin_tip: p[1],
            upper_left_jaw: p[2],
            upper_right_jaw: p[3],
            lower_left_jaw: p[4],
            lower_right_jaw: p[5],
        };
        anchors.validate()?;
        Ok(anchors)
    }

    pub fn to_array(&self) -> [Point; 6] {
        [
            self.nose_bridge,
            self.chin_tip,
            self.upper_left_jaw,
            self.upper_right_jaw,
            self.lower_left_jaw,
            self.lower_right_jaw,
        ]
    }

    fn validate(&self) -> Result<()> {
        let pts = self.to_array();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if pts[i] == pts[j] {
                    return Err(Error::Validation(format!(
                        "implausible landmark set: anchors {i} and {j} coincide"
                    )));
                }
            }
        }
        if self.chin_tip.y <= self.nose_bridge.y {
            return Err(Error::Validation(
                "implausible landmark set: chin tip is not below the nose bridge".into(),
            ));
        }
        if self.upper_left_jaw.x >= self.upper_right_jaw.x {
            return Err(Error::Validation(
                "implausible landmark set: left jaw is not left of right jaw".into(),
            ));
        }
        Ok(())
    }
}

pub fn estimate_tilt(lm: &FaceLandmarks) -> Result<Tilt> {
    let top = lm.point(NOSE_BRIDGE_TOP);
    let chin = lm.point(CHIN_TIP);
    let v = chin - top;
    if v.x == 0.0 && v.y == 0.0 {
        return Err(Error::Geometry(format!(
            "landmarks {NOSE_BRIDGE_TOP} and {CHIN_TIP} coincide; tilt is undefined"
        )));
    }
    let angle_deg = v.x.atan2(v.y).to_degrees();
    Ok(Tilt {
        bin: TiltBin::from_angle(angle_deg),
        angle_deg,
    })
}

pub fn extract_anchors(lm: &FaceLandmarks) -> Result<FaceAnchors> {
    FaceAnchors::from_array(ANCHOR_INDICES.map(|i| lm.point(i)))
}

#[derive(Serialize, Deserialize)]
struct FileDoc {
    image: String,
    faces: Vec<FileFace>,
}

#[derive(Serialize, Deserialize)]
struct FileFace {
    bbox: [f64; 4],
    points: Vec<[f64; 2]>,
}

/// Parse the landmark JSON document. `origin` only labels errors.
pub fn parse_landmarks(text: &str, origin: &Path) -> Result<Vec<FaceLandmarks>> {
    let doc: FileDoc = serde_json::from_str(text).map_err(|e| Error::json(origin, &e))?;
    doc.faces
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let [x, y, width, height] = f.bbox;
            let points = f.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
            FaceLandmarks::validated(
                doc.image.clone(),
                BBox {
                    x,
                    y,
                    width,
                    height,
                },
                points,
                i,
            )
        })
        .collect()
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<FaceLandmarks>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path)
}

/// Serialize faces of one image. An empty slice yields an empty face list.
pub fn landmarks_to_json(image: &str, faces: &[FaceLandmarks]) -> String {
    let doc = FileDoc {
        image: image.to_string(),
        faces: faces
            .iter()
            .map(|f| FileFace {
                bbox: [f.bbox.x, f.bbox.y, f.bbox.width, f.bbox.height],
                points: f.points.iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("landmark document serializes")
}

pub fn save_landmarks(path: impl AsRef<Path>, image: &str, faces: &[FaceLandmarks]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, landmarks_to_json(image, faces)).map_err(|e| Error::io(path, e))
}

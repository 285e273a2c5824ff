//! Mask template library and single-face mask rendering.

mod assets;
mod render;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::{Point, TiltBin};

pub use assets::{builtin_colors, builtin_library, builtin_patterns, builtin_template};
pub use render::{apply_color, apply_pattern, blend, luminance, sample_bilinear, warp_mask};
pub use transform::{
    estimate_transform, fit_points, rms_residual, FitModel, Transform2D, TransformFit,
    DEFAULT_MAX_RESIDUAL_PX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MaskType {
    SurgicalGreen,
    SurgicalBlue,
    N95,
    Cloth,
    Gas,
}

impl MaskType {
    pub const ALL: [MaskType; 5] = [
        MaskType::SurgicalGreen,
        MaskType::SurgicalBlue,
        MaskType::N95,
        MaskType::Cloth,
        MaskType::Gas,
    ];

    /// The four plain types used for training-set generation.
    pub const PLAIN: [MaskType; 4] = [
        MaskType::Cloth,
        MaskType::SurgicalGreen,
        MaskType::SurgicalBlue,
        MaskType::N95,
    ];

    /// Lowercase token used in file names, manifests and flags.
    pub fn token(self) -> &'static str {
        match self {
            MaskType::SurgicalGreen => "surgical_green",
            MaskType::SurgicalBlue => "surgical_blue",
            MaskType::N95 => "n95",
            MaskType::Cloth => "cloth",
            MaskType::Gas => "gas",
        }
    }

    fn valid_list() -> String {
        MaskType::ALL
            .iter()
            .map(|t| t.token())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for MaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        MaskType::ALL
            .into_iter()
            .find(|t| t.token() == norm)
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "unknown mask type {s:?}; valid types are: {}",
                    MaskType::valid_list()
                ))
            })
    }
}

impl Serialize for MaskType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for MaskType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A mask raster for one (type, tilt bin), with its six anchors in
/// template pixel space, ordered like [`crate::landmark::FaceAnchors`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTemplate {
    mask_type: MaskType,
    bin: TiltBin,
    image: RgbaImage,
    anchors: [Point; 6],
}

impl MaskTemplate {
    pub fn new(
        mask_type: MaskType,
        bin: TiltBin,
        image: RgbaImage,
        anchors: [Point; 6],
    ) -> Result<Self> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!(
                "{mask_type}/{bin} template has zero size"
            )));
        }
        for (i, a) in anchors.iter().enumerate() {
            let inside = a.x >= 0.0 && a.y >= 0.0 && a.x <= (w - 1) as f64 && a.y <= (h - 1) as f64;
            if !inside {
                return Err(Error::Validation(format!(
                    "{mask_type}/{bin} anchor {i} ({}, {}) is outside the {w}x{h} template",
                    a.x, a.y
                )));
            }
        }
        if image.pixels().all(|p| p[3] == 0) {
            return Err(Error::Validation(format!(
                "{mask_type}/{bin} template has an empty silhouette"
            )));
        }
        Ok(MaskTemplate {
            mask_type,
            bin,
            image,
            anchors,
        })
    }

    pub fn mask_type(&self) -> MaskType {
        self.mask_type
    }

    pub fn bin(&self) -> TiltBin {
        self.bin
    }

    pub fn image(&self) -> &RgbaImage {
        &self.image
    }

    pub fn anchors(&self) -> &[Point; 6] {
        &self.anchors
    }

    /// Same geometry and anchors with a recolored raster. Alpha must match.
    pub(crate) fn with_image(&self, image: RgbaImage) -> MaskTemplate {
        debug_assert_eq!(image.dimensions(), self.image.dimensions());
        MaskTemplate {
            image,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaskLibrary {
    templates: BTreeMap<(MaskType, TiltBin), MaskTemplate>,
    patterns: BTreeMap<String, RgbImage>,
    colors: BTreeMap<String, [u8; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TemplateEntry {
    #[serde(rename = "type")]
    mask_type: MaskType,
    bin: TiltBin,
    file: String,
    anchors: [[f64; 2]; 6],
}

pub const TEMPLATE_MANIFEST: &str = "templates.json";
pub const PATTERN_DIR: &str = "patterns";

impl MaskLibrary {
    /// Checks that every mask type present has a template for every bin.
    pub fn new(
        templates: Vec<MaskTemplate>,
        patterns: BTreeMap<String, RgbImage>,
        colors: BTreeMap<String, [u8; 3]>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in templates {
            let key = (t.mask_type, t.bin);
            if map.insert(key, t).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate template for {}/{}",
                    key.0, key.1
                )));
            }
        }
        if map.is_empty() {
            return Err(Error::Validation("mask library has no templates".into()));
        }
        let types: Vec<MaskType> = map.keys().map(|k| k.0).collect();
        for ty in types {
            for bin in TiltBin::ALL {
                if !map.contains_key(&(ty, bin)) {
                    return Err(Error::Validation(format!(
                        "mask type {ty} has no {bin} template"
                    )));
                }
            }
        }
        Ok(MaskLibrary {
            templates: map,
            patterns,
            colors,
        })
    }

    pub fn mask_types(&self) -> Vec<MaskType> {
        let mut v: Vec<MaskType> = self.templates.keys().map(|k| k.0).collect();
        v.dedup();
        v
    }

    pub fn templates(&self) -> impl Iterator<Item = &MaskTemplate> {
        self.templates.values()
    }

    pub fn pattern_names(&self) -> impl Iterator<Item = &str> {
        self.patterns.keys().map(String::as_str)
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    /// Pattern by position in name order.
    pub fn pattern_at(&self, index: usize) -> Option<(&str, &RgbImage)> {
        self.patterns
            .iter()
            .nth(index)
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn pattern(&self, name: &str) -> Result<&RgbImage> {
        self.patterns.get(name).ok_or_else(|| {
            Error::Lookup(format!(
                "unknown pattern {name:?}; available: {}",
                self.patterns.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn color(&self, name: &str) -> Option<[u8; 3]> {
        self.colors.get(name).copied()
    }

    pub fn colors(&self) -> &BTreeMap<String, [u8; 3]> {
        &self.colors
    }

    pub fn add_color(&mut self, name: impl Into<String>, rgb: [u8; 3]) {
        self.colors.insert(name.into(), rgb);
    }

    /// Load `templates.json`, its PNG files, and `patterns/*.png` from `dir`.
    /// Colors start from the built-in palette.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(TEMPLATE_MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: Vec<TemplateEntry> =
            serde_json::from_str(&text).map_err(|e| Error::json(&manifest, &e))?;
        let mut templates = Vec::with_capacity(entries.len());
        for e in entries {
            let img = image::open(dir.join(&e.file))?.to_rgba8();
            let anchors = e.anchors.map(|[x, y]| Point::new(x, y));
            templates.push(MaskTemplate::new(e.mask_type, e.bin, img, anchors)?);
        }
        let mut patterns = BTreeMap::new();
        let pdir = dir.join(PATTERN_DIR);
        if pdir.is_dir() {
            for entry in fs::read_dir(&pdir).map_err(|e| Error::io(&pdir, e))? {
                let path = entry.map_err(|e| Error::io(&pdir, e))?.path();
                if path.extension().and_then(|s| s.to_str()) != Some("png") {
                    continue;
                }
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                patterns.insert(name, image::open(&path)?.to_rgb8());
            }
        }
        MaskLibrary::new(templates, patterns, builtin_colors())
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let pdir = dir.join(PATTERN_DIR);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut entries = Vec::new();
        for t in self.templates.values() {
            let file = format!("{}_{}.png", t.mask_type, t.bin.as_str().to_ascii_lowercase());
            t.image.save(dir.join(&file))?;
            entries.push(TemplateEntry {
                mask_type: t.mask_type,
                bin: t.bin,
                file,
                anchors: t.anchors.map(|p| [p.x, p.y]),
            });
        }
        let manifest = dir.join(TEMPLATE_MANIFEST);
        let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))?;
        for (name, img) in &self.patterns {
            img.save(pdir.join(format!("{name}.png")))?;
        }
        Ok(())
    }
}

pub fn select_template(lib: &MaskLibrary, mask_type: MaskType, bin: TiltBin) -> Result<&MaskTemplate> {
    lib.templates.get(&(mask_type, bin)).ok_or_else(|| {
        Error::Lookup(format!(
            "no {mask_type}/{bin} template in the library; available types: {}",
            lib.mask_types()
                .iter()
                .map(|t| t.token())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })
}

/// Parse `#rrggbb` (leading `#` optional).
pub fn parse_hex_color(s: &str) -> Result<[u8; 3]> {
    let hex = s.trim().trim_start_matches('#');
    if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::Validation(format!("invalid hex color {s:?}")));
    }
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("checked hex digits");
    Ok([byte(0), byte(2), byte(4)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_mask_types() {
        assert_eq!("n95".parse::<MaskType>().unwrap(), MaskType::N95);
        assert_eq!("SURGICAL_GREEN".parse::<MaskType>().unwrap(), MaskType::SurgicalGreen);
        assert_eq!("surgical-blue".parse::<MaskType>().unwrap(), MaskType::SurgicalBlue);
        let err = "scarf".parse::<MaskType>().unwrap_err().to_string();
        for t in MaskType::ALL {
            assert!(err.contains(t.token()), "{err}");
        }
    }

    #[test]
    fn keyed_lookup() {
        let lib = builtin_library();
        let t = select_template(&lib, MaskType::N95, TiltBin::Front).unwrap();
        assert_eq!((t.mask_type(), t.bin()), (MaskType::N95, TiltBin::Front));
        let t = select_template(&lib, MaskType::Cloth, TiltBin::Left).unwrap();
        assert_eq!((t.mask_type(), t.bin()), (MaskType::Cloth, TiltBin::Left));
    }

    #[test]
    fn missing_type_lists_available() {
        let lib = builtin_library();
        let only_n95: Vec<MaskTemplate> = lib
            .templates()
            .filter(|t| t.mask_type() == MaskType::N95)
            .cloned()
            .collect();
        let small = MaskLibrary::new(only_n95, BTreeMap::new(), BTreeMap::new()).unwrap();
        let err = select_template(&small, MaskType::Gas, TiltBin::Front).unwrap_err();
        assert!(err.to_string().contains("available types: n95"), "{err}");
    }

    #[test]
    fn incomplete_bins_rejected() {
        let lib = builtin_library();
        let partial: Vec<MaskTemplate> = lib
            .templates()
            .filter(|t| t.mask_type() == MaskType::N95 && t.bin() != TiltBin::Left)
            .cloned()
            .collect();
        assert!(MaskLibrary::new(partial, BTreeMap::new(), BTreeMap::new()).is_err());
    }

    #[test]
    fn shipped_set_is_complete() {
        let lib = builtin_library();
        assert_eq!(lib.mask_types(), MaskType::ALL.to_vec());
        assert_eq!(lib.templates().count(), 15);
        assert!(lib.pattern_count() >= 24);
    }

    #[test]
    fn anchors_outside_template_rejected() {
        let img = RgbaImage::from_pixel(4, 4, image::Rgba([1, 1, 1, 255]));
        let mut anchors = [Point::new(1.0, 1.0); 6];
        assert!(MaskTemplate::new(MaskType::Gas, TiltBin::Front, img.clone(), anchors).is_ok());
        anchors[3] = Point::new(4.5, 1.0);
        assert!(MaskTemplate::new(MaskType::Gas, TiltBin::Front, img, anchors).is_err());
    }

    #[test]
    fn hex_colors() {
        assert_eq!(parse_hex_color("#ff8000").unwrap(), [255, 128, 0]);
        assert_eq!(parse_hex_color("0a0B0c").unwrap(), [10, 11, 12]);
        assert!(parse_hex_color("#12345").is_err());
    }

    #[test]
    fn library_dir_round_trip() {
        let lib = builtin_library();
        let dir = tempfile::tempdir().unwrap();
        lib.save_dir(dir.path()).unwrap();
        let back = MaskLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(back.templates().count(), lib.templates().count());
        for (a, b) in back.templates().zip(lib.templates()) {
            assert_eq!(a, b);
        }
        assert_eq!(back.pattern_count(), lib.pattern_count());
    }
}

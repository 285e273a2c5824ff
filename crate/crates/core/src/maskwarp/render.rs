use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rayon::prelude::*;

use super::transform::Transform2D;
use super::MaskTemplate;
use crate::error::{Error, Result};
use crate::landmark::Point;

/// Rec. 601 luma of an RGB triple, in 0..=255.
pub fn luminance(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at a fractional position; texels outside the raster
/// count as fully transparent.
pub fn sample_bilinear(img: &RgbaImage, u: f64, v: f64) -> [f64; 4] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if !(u > -1.0 && v > -1.0 && u < w as f64 && v < h as f64) {
        return [0.0; 4];
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut out = [0.0; 4];
    for (x, y, wgt) in taps {
        if wgt == 0.0 || x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        let p = img.get_pixel(x as u32, y as u32).0;
        for c in 0..4 {
            out[c] += wgt * p[c] as f64;
        }
    }
    out
}

/// Render the template into an `out_w x out_h` canvas through `t`
/// (template space to output space), by inverse mapping each output pixel.
pub fn warp_mask(
    tpl: &MaskTemplate,
    t: &Transform2D,
    out_size: (u32, u32),
) -> Result<RgbaImage> {
    let (out_w, out_h) = out_size;
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!(
            "output size must be nonzero, got {out_w}x{out_h}"
        )));
    }
    let inv = t.inverse()?;
    let src = tpl.image();
    let mut out = RgbaImage::new(out_w, out_h);
    let row_len = out_w as usize * 4;
    out.as_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..out_w as usize {
                let px = match inv.apply(Point::new(x as f64, y as f64)) {
                    Some(p) => sample_bilinear(src, p.x, p.y),
                    None => [0.0; 4],
                };
                for c in 0..4 {
                    row[4 * x + c] = to_u8(px[c]);
                }
            }
        });
    Ok(out)
}

fn shade_silhouette(tpl: &MaskTemplate, tint: impl Fn(u32, u32) -> [u8; 3], intensity: f64) -> MaskTemplate {
    let mut img = tpl.image().clone();
    for (x, y, px) in img.enumerate_pixels_mut() {
        if px[3] == 0 {
            continue;
        }
        let base = [px[0], px[1], px[2]];
        let lum = luminance(base);
        let p = tint(x, y);
        for c in 0..3 {
            let shaded = p[c] as f64 * lum / 255.0;
            px[c] = to_u8((1.0 - intensity) * base[c] as f64 + intensity * shaded);
        }
    }
    tpl.with_image(img)
}

/// Blend a tiled pattern into the silhouette, keeping the template shading.
/// Tiling is anchored at the template origin.
pub fn apply_pattern(tpl: &MaskTemplate, pattern: &RgbImage, intensity: f64) -> Result<MaskTemplate> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Argument(format!(
            "pattern intensity must lie in [0, 1], got {intensity}"
        )));
    }
    if pattern.width() == 0 || pattern.height() == 0 {
        return Err(Error::Argument("pattern raster is empty".into()));
    }
    let (pw, ph) = pattern.dimensions();
    Ok(shade_silhouette(
        tpl,
        |x, y| pattern.get_pixel(x % pw, y % ph).0,
        intensity,
    ))
}

/// Recolor the silhouette with a solid color at full intensity.
pub fn apply_color(tpl: &MaskTemplate, rgb: [u8; 3]) -> MaskTemplate {
    shade_silhouette(tpl, |_, _| rgb, 1.0)
}

/// Source-over composite of the warped mask onto the face.
pub fn blend(face: &RgbImage, mask: &RgbaImage) -> Result<RgbImage> {
    if face.dimensions() != mask.dimensions() {
        return Err(Error::Argument(format!(
            "face is {:?} but mask is {:?}",
            face.dimensions(),
            mask.dimensions()
        )));
    }
    let mut out = face.clone();
    for (dst, m) in out.pixels_mut().zip(mask.pixels()) {
        let Rgba([mr, mg, mb, ma]) = *m;
        if ma == 0 {
            continue;
        }
        let a = ma as f64 / 255.0;
        let Rgb(f) = *dst;
        let mix = |mc: u8, fc: u8| to_u8(a * mc as f64 + (1.0 - a) * fc as f64);
        *dst = Rgb([mix(mr, f[0]), mix(mg, f[1]), mix(mb, f[2])]);
    }
    Ok(out)
}

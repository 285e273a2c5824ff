//! Projective fit through point correspondences (normalized DLT).

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::landmark::{FaceAnchors, Point};

/// Default RMS reprojection residual above which a fit is flagged.
pub const DEFAULT_MAX_RESIDUAL_PX: f64 = 4.0;

const MIN_ABS_DET: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// Row-major 3x3 projective matrix with `m[(2, 2)] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2D {
    m: Matrix3<f64>,
}

impl Transform2D {
    pub fn identity() -> Self {
        Transform2D {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Transform2D {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Normalizes the scale so the bottom-right entry is 1.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let corner = m[(2, 2)];
        if !corner.is_finite() || corner.abs() < MIN_ABS_DET {
            return Err(Error::Geometry(
                "projective matrix has a vanishing bottom-right entry".into(),
            ));
        }
        let m = m / corner;
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= MIN_ABS_DET {
            return Err(Error::Geometry(format!(
                "projective matrix is singular (det = {det:e})"
            )));
        }
        Ok(Transform2D { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Result<Transform2D> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Geometry("projective matrix is not invertible".into()))?;
        Transform2D::from_matrix(inv)
    }

    /// Map a point; `None` when it lands on or behind the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let h = self.m * Vector3::new(p.x, p.y, 1.0);
        if h.z.abs() < 1e-15 {
            return None;
        }
        Some(Point::new(h.x / h.z, h.y / h.z))
    }

    pub fn compose(&self, inner: &Transform2D) -> Result<Transform2D> {
        Transform2D::from_matrix(self.m * inner.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    Projective,
    /// Used when the projective system is rank-deficient.
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformFit {
    pub transform: Transform2D,
    pub rms_residual_px: f64,
    pub model: FitModel,
    pub poor_fit: bool,
}

/// Fit the template-to-face transform through the six anchor pairs.
pub fn estimate_transform(
    template_anchors: &[Point; 6],
    face: &FaceAnchors,
    max_residual_px: f64,
) -> Result<TransformFit> {
    fit_points(template_anchors, &face.to_array(), max_residual_px)
}

/// Least-squares homography through `src[i] -> dst[i]` with Hartley
/// normalization, falling back to an affine fit when the projective system
/// has more than one null direction.
pub fn fit_points(src: &[Point], dst: &[Point], max_residual_px: f64) -> Result<TransformFit> {
    if src.len() != dst.len() {
        return Err(Error::Argument(format!(
            "correspondence count mismatch: {} source vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Geometry(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let (src_n, t_src) = normalize(src)?;
    let (dst_n, t_dst) = normalize(dst)?;

    let (hn, model) = match (src.len() >= 4)
        .then(|| solve_projective(&src_n, &dst_n))
        .flatten()
    {
        Some(h) => (h, FitModel::Projective),
        None => (solve_affine(&src_n, &dst_n)?, FitModel::Affine),
    };

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Geometry("target normalization is singular".into()))?;
    let transform = Transform2D::from_matrix(t_dst_inv * hn * t_src)?;
    let rms_residual_px = rms_residual(&transform, src, dst);
    Ok(TransformFit {
        transform,
        rms_residual_px,
        model,
        poor_fit: !(rms_residual_px <= max_residual_px),
    })
}

/// RMS distance between `t(src[i])` and `dst[i]`.
pub fn rms_residual(t: &Transform2D, src: &[Point], dst: &[Point]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| match t.apply(*s) {
            Some(p) => (p - d).norm_squared(),
            None => f64::INFINITY,
        })
        .sum();
    (sum / src.len() as f64).sqrt()
}

/// Translate to the centroid and scale to mean distance sqrt(2).
fn normalize(points: &[Point]) -> Result<(Vec<Point>, Matrix3<f64>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::Geometry(
            "degenerate configuration: all points coincide".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let pts = points
        .iter()
        .map(|p| Point::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    Ok((pts, t))
}

fn solve_projective(src: &[Point], dst: &[Point]) -> Option<Matrix3<f64>> {
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    // A single null direction is required; a second near-zero singular value
    // means the correspondences do not pin down a homography.
    if svd.singular_values[order[1]] <= RANK_TOL * largest {
        return None;
    }
    let h = v_t.row(order[0]);
    Some(Matrix3::new(
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8],
    ))
}

fn solve_affine(src: &[Point], dst: &[Point]) -> Result<Matrix3<f64>> {
    let n = src.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 6);
    let mut b = nalgebra::DVector::<f64>::zeros(2 * n);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        a.row_mut(2 * i)
            .copy_from_slice(&[s.x, s.y, 1.0, 0.0, 0.0, 0.0]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, s.x, s.y, 1.0]);
        b[2 * i] = d.x;
        b[2 * i + 1] = d.y;
    }
    let svd = a.svd(true, true);
    let largest = svd.singular_values.max();
    if svd.singular_values.min() <= RANK_TOL * largest {
        return Err(Error::Geometry(
            "degenerate configuration: correspondences are collinear".into(),
        ));
    }
    let p = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Geometry(format!("affine solve failed: {e}")))?;
    Ok(Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], 0.0, 0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    const SIX: [(f64, f64); 6] = [
        (100.0, 40.0),
        (100.0, 170.0),
        (30.0, 70.0),
        (170.0, 72.0),
        (55.0, 140.0),
        (148.0, 138.0),
    ];

    #[test]
    fn identity_is_exact() {
        let src = pts(&SIX);
        let fit = fit_points(&src, &src, 4.0).unwrap();
        let m = fit.transform.matrix();
        let id = Matrix3::<f64>::identity();
        for i in 0..9 {
            assert!((m[i] - id[i]).abs() < 1e-9, "{m}");
        }
        assert_eq!(fit.model, FitModel::Projective);
        assert!(!fit.poor_fit);
    }

    #[test]
    fn translation_is_recovered() {
        let src = pts(&SIX);
        let dst: Vec<Point> = src.iter().map(|p| Point::new(p.x + 10.0, p.y + 5.0)).collect();
        let fit = fit_points(&src, &dst, 4.0).unwrap();
        let expected = Transform2D::translation(10.0, 5.0);
        for (a, b) in fit.transform.matrix().iter().zip(expected.matrix().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_fall_back_then_fail() {
        // Four points with three on a line still fix a homography only
        // up to a family; all-collinear input cannot be fit at all.
        let line = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0), (5.0, 5.0)]);
        assert!(matches!(fit_points(&line, &line, 4.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn three_points_use_affine() {
        let src = pts(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let dst = pts(&[(5.0, 5.0), (25.0, 5.0), (5.0, 15.0)]);
        let fit = fit_points(&src, &dst, 4.0).unwrap();
        assert_eq!(fit.model, FitModel::Affine);
        assert!(fit.rms_residual_px < 1e-9);
    }

    #[test]
    fn poor_fit_is_flagged_not_fatal() {
        let src = pts(&SIX);
        let mut dst = src.clone();
        dst[1].x += 60.0;
        dst[0].y -= 30.0;
        let fit = fit_points(&src, &dst, 4.0).unwrap();
        assert!(fit.rms_residual_px > 4.0);
        assert!(fit.poor_fit);
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Transform2D::from_rows([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(Transform2D::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn from_matrix_normalizes_corner() {
        let t = Transform2D::from_rows([[2.0, 0.0, 4.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(t.rows(), [[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
}

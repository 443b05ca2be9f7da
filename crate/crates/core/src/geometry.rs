//! Planar projective geometry: homography estimation from point
//! correspondences, point mapping, inversion, and polygon membership.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude the homogeneous `w` of a mapped point is treated as
/// zero and the point as lying on the horizon line.
pub const HORIZON_EPS: f64 = 1e-9;

/// Minimum `|det|` of a canonically scaled homography.
pub const DETERMINANT_EPS: f64 = 1e-14;

/// Collinearity tolerance for triangle areas measured on normalized points.
const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("at least 4 correspondences are required, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("matrix is singular or not invertible")]
    SingularMatrix,
    #[error("point ({x}, {y}) maps to infinity (|w| = {w:e})")]
    HorizonSingularity { x: f64, y: f64, w: f64 },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Image-plane position in pixels: x to the right, y downward, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

/// Road-plane position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A 3x3 projective map, kept in canonical scale (largest-magnitude entry
/// equal to 1) and guaranteed invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Builds a homography from a row-major matrix, rescaling it to canonical
    /// form. Fails if the matrix is not finite or not invertible.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let pivot = m
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot == 0.0 {
            return Err(GeometryError::SingularMatrix);
        }
        let m = m / pivot;
        if m.determinant().abs() <= DETERMINANT_EPS {
            return Err(GeometryError::SingularMatrix);
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
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

    /// Maps raw coordinates through the matrix and divides by `w`.
    pub fn map_xy(&self, x: f64, y: f64) -> Result<(f64, f64), GeometryError> {
        let v = self.m * Vector3::new(x, y, 1.0);
        if v.z.abs() < HORIZON_EPS {
            return Err(GeometryError::HorizonSingularity { x, y, w: v.z });
        }
        Ok((v.x / v.z, v.y / v.z))
    }

    /// Image to road plane.
    pub fn apply(&self, p: PixelPoint) -> Result<WorldPoint, GeometryError> {
        let (x, y) = self.map_xy(p.x, p.y)?;
        Ok(WorldPoint { x, y })
    }

    /// Road plane to image; meaningful on the result of [`Homography::invert`].
    pub fn project(&self, p: WorldPoint) -> Result<PixelPoint, GeometryError> {
        let (x, y) = self.map_xy(p.x, p.y)?;
        Ok(PixelPoint { x, y })
    }

    pub fn invert(&self) -> Result<Self, GeometryError> {
        let inv = self.m.try_inverse().ok_or(GeometryError::SingularMatrix)?;
        Self::from_matrix(inv)
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    /// Ratio of largest to smallest singular value.
    pub fn condition_number(&self) -> f64 {
        let sv = self.m.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Similarity transform that moves the centroid to the origin and scales the
/// mean distance from it to sqrt(2).
fn normalizing_transform(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .iter()
        .map(|&(x, y)| (x - cx).hypot(y - cy))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform_all(t: &Matrix3<f64>, points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|&(x, y)| {
            let v = t * Vector3::new(x, y, 1.0);
            (v.x / v.z, v.y / v.z)
        })
        .collect()
}

fn check_no_collinear_triple(points: &[(f64, f64)], side: &str) -> Result<(), GeometryError> {
    let n = points.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross.abs() < COLLINEAR_EPS {
                    return Err(GeometryError::DegenerateConfiguration(format!(
                        "{side} points {i}, {j}, {k} are collinear or coincident"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Exactly-determined solve with h33 pinned to 1. Returns `None` when the
/// system is singular, i.e. when the true h33 is (near) zero.
fn solve_pinned(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r = 2 * i;
        a.set_row(
            r,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]),
        );
        a.set_row(
            r + 1,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]),
        );
        b[r] = u;
        b[r + 1] = v;
    }
    let lu = a.lu();
    if lu.determinant().abs() < 1e-10 {
        return None;
    }
    let h = lu.solve(&b)?;
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Homogeneous least-squares solve: the right singular vector of the stacked
/// 2n x 9 system with the smallest singular value.
fn solve_null_space(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Matrix3<f64>, GeometryError> {
    // Pad to at least 9 rows so the SVD yields a full 9x9 V.
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r = 2 * i;
        let row0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let row1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(r, c)] = row0[c];
            a[(r + 1, c)] = row1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::SingularMatrix)?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(GeometryError::SingularMatrix)?;
    let h = v_t.row(idx);
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]))
}

/// Estimates the homography taking each source pixel to its road-plane
/// target. Four correspondences give an exact fit; more are fitted in the
/// algebraic least-squares sense. Both point sets are normalized before the
/// linear system is built.
pub fn estimate_homography(
    correspondences: &[(PixelPoint, WorldPoint)],
) -> Result<Homography, GeometryError> {
    if correspondences.len() < 4 {
        return Err(GeometryError::TooFewPoints(correspondences.len()));
    }
    if correspondences
        .iter()
        .any(|(s, t)| !s.is_finite() || !t.is_finite())
    {
        return Err(GeometryError::NonFinite);
    }
    let src: Vec<(f64, f64)> = correspondences.iter().map(|(p, _)| (p.x, p.y)).collect();
    let dst: Vec<(f64, f64)> = correspondences.iter().map(|(_, q)| (q.x, q.y)).collect();

    let t_src = normalizing_transform(&src);
    let t_dst = normalizing_transform(&dst);
    let src_n = transform_all(&t_src, &src);
    let dst_n = transform_all(&t_dst, &dst);
    check_no_collinear_triple(&src_n, "source")?;
    check_no_collinear_triple(&dst_n, "target")?;

    let h_n = if src.len() == 4 {
        match solve_pinned(&src_n, &dst_n) {
            Some(h) => h,
            None => solve_null_space(&src_n, &dst_n)?,
        }
    } else {
        solve_null_space(&src_n, &dst_n)?
    };

    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::SingularMatrix)?;
    Homography::from_matrix(t_dst_inv * h_n * t_src).map_err(|e| match e {
        GeometryError::SingularMatrix => {
            GeometryError::DegenerateConfiguration("estimated matrix is singular".into())
        }
        other => other,
    })
}

/// A simple (non-self-intersecting) polygon in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<PixelPoint>,
}

fn orient(a: PixelPoint, b: PixelPoint, c: PixelPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: PixelPoint, b: PixelPoint, p: PixelPoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: PixelPoint, b: PixelPoint, c: PixelPoint, d: PixelPoint) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

impl Polygon {
    pub fn new(vertices: Vec<PixelPoint>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let a = vertices[0];
        if (1..n).all(|i| (i + 1..n).all(|j| orient(a, vertices[i], vertices[j]) == 0.0)) {
            return Err(GeometryError::InvalidPolygon(
                "all vertices are collinear".into(),
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (p1, p2) = (vertices[i], vertices[(i + 1) % n]);
                let (q1, q2) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(p1, p2, q1, q2) {
                    return Err(GeometryError::InvalidPolygon(format!(
                        "edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[PixelPoint] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (PixelPoint, PixelPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Crossing-number test; points on an edge or vertex count as inside.
    pub fn contains(&self, p: PixelPoint) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if orient(a, b, p) == 0.0 && on_segment(a, b, p) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

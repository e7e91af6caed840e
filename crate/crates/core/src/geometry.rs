//! Projective-geometry primitives and the raster/line types shared by the
//! rest of the crate.
//!
//! Image coordinates put the origin at the top-left pixel center with `y`
//! growing downward; pixel `(x, y)` sits at integer coordinates.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg;

/// Smallest homogeneous depth treated as finite.
pub const DEPTH_EPS: f64 = 1e-12;
/// Smallest determinant magnitude accepted for an invertible homography.
pub const DET_EPS: f64 = 1e-12;
/// Highest floor order carried by a [`Line5Tuple`].
pub const MAX_FLOOR_ORDER: u8 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quad corners are degenerate (collinear or coincident)")]
    DegenerateQuad,
    #[error("quad is not strictly convex")]
    NonConvexQuad,
    #[error("point maps to infinity (homogeneous depth {0:e})")]
    PointAtInfinity(f64),
    #[error("matrix is singular or cannot be normalized")]
    SingularMatrix,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid line: {0}")]
    InvalidLine(String),
    #[error("mask has {got} labels, expected {width}x{height}")]
    MaskSize { width: usize, height: usize, got: usize },
    #[error("mask dimensions must be positive")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Facade orientation relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Left,
    Right,
    Front,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::Left, Orientation::Right, Orientation::Front];

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Left => "left",
            Orientation::Right => "right",
            Orientation::Front => "front",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Orientation::Left),
            "right" => Some(Orientation::Right),
            "front" => Some(Orientation::Front),
            _ => None,
        }
    }

    /// Facade-palette code used to stamp this orientation into a semantic mask.
    pub fn code(self) -> u8 {
        match self {
            Orientation::Left => crate::palette::FACADE_LEFT,
            Orientation::Right => crate::palette::FACADE_RIGHT,
            Orientation::Front => crate::palette::FACADE_FRONT,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Orientation::ALL.into_iter().find(|o| o.code() == code)
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One floor-level line: two endpoints (left to right) and its floor order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line5Tuple {
    xs: f64,
    ys: f64,
    xe: f64,
    ye: f64,
    order: u8,
}

impl Line5Tuple {
    /// Builds a line, swapping the endpoints if they were given right to left.
    pub fn new(xs: f64, ys: f64, xe: f64, ye: f64, order: u8) -> Result<Self, GeometryError> {
        if ![xs, ys, xe, ye].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(1..=MAX_FLOOR_ORDER).contains(&order) {
            return Err(GeometryError::InvalidLine(format!(
                "order {order} outside 1..={MAX_FLOOR_ORDER}"
            )));
        }
        let (xs, ys, xe, ye) = if xs <= xe { (xs, ys, xe, ye) } else { (xe, ye, xs, ys) };
        Ok(Self { xs, ys, xe, ye, order })
    }

    pub fn xs(&self) -> f64 {
        self.xs
    }
    pub fn ys(&self) -> f64 {
        self.ys
    }
    pub fn xe(&self) -> f64 {
        self.xe
    }
    pub fn ye(&self) -> f64 {
        self.ye
    }
    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn start(&self) -> Point2 {
        Point2::new(self.xs, self.ys)
    }

    pub fn end(&self) -> Point2 {
        Point2::new(self.xe, self.ye)
    }

    pub fn mean_y(&self) -> f64 {
        0.5 * (self.ys + self.ye)
    }

    pub fn with_order(&self, order: u8) -> Result<Self, GeometryError> {
        Self::new(self.xs, self.ys, self.xe, self.ye, order)
    }

    /// `y` on the supporting segment at column `x`; `ys` for a zero-length span.
    pub fn y_at(&self, x: f64) -> f64 {
        if self.xe == self.xs {
            self.ys
        } else {
            self.ys + (self.ye - self.ys) * (x - self.xs) / (self.xe - self.xs)
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { xs: self.xs + dx, ys: self.ys + dy, xe: self.xe + dx, ye: self.ye + dy, order: self.order }
    }
}

/// A convex quadrilateral, corners ordered top-left, top-right,
/// bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    corners: [Point2; 4],
    orientation: Orientation,
}

impl Quad {
    pub fn new(corners: [Point2; 4], orientation: Orientation) -> Result<Self, GeometryError> {
        if !corners.iter().all(Point2::is_finite) {
            return Err(GeometryError::NonFinite);
        }
        if !is_strictly_convex(&corners) {
            return Err(GeometryError::NonConvexQuad);
        }
        Ok(Self { corners, orientation })
    }

    /// Axis-aligned rectangle spanning `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, orientation: Orientation) -> Result<Self, GeometryError> {
        Self::new(
            [Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)],
            orientation,
        )
    }

    pub fn corners(&self) -> &[Point2; 4] {
        &self.corners
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.corners).abs()
    }

    /// Inclusive point-in-quad test with absolute slack `eps` (pixels).
    pub fn contains(&self, p: Point2, eps: f64) -> bool {
        let sign = polygon_signed_area(&self.corners).signum();
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let edge_len = a.distance(&b);
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            // signed distance to the edge line, positive inside
            sign * cross / edge_len >= -eps
        })
    }

    /// Integer pixels of a `width x height` raster lying inside the quad.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for c in &self.corners {
            x0 = x0.min(c.x);
            y0 = y0.min(c.y);
            x1 = x1.max(c.x);
            y1 = y1.max(c.y);
        }
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 || x0 > width as f64 - 1.0 || y0 > height as f64 - 1.0 {
            return Vec::new();
        }
        let (xa, xb) = (clamp(x0.ceil(), width) as usize, clamp(x1.floor(), width) as usize);
        let (ya, yb) = (clamp(y0.ceil(), height) as usize, clamp(y1.floor(), height) as usize);
        let mut out = Vec::new();
        for y in ya..=yb {
            for x in xa..=xb {
                if self.contains(Point2::new(x as f64, y as f64), 1e-9) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

fn polygon_signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

fn is_strictly_convex(c: &[Point2; 4]) -> bool {
    let crosses: Vec<f64> = (0..4)
        .map(|i| {
            let (a, b, d) = (c[i], c[(i + 1) % 4], c[(i + 2) % 4]);
            (b.x - a.x) * (d.y - b.y) - (b.y - a.y) * (d.x - b.x)
        })
        .collect();
    let scale = c.iter().fold(1.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let tol = 1e-12 * scale * scale;
    crosses.iter().all(|&v| v > tol) || crosses.iter().all(|&v| v < -tol)
}

/// A 3x3 projective map, normalized so that `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };

    /// Normalizes `m` by its bottom-right entry and checks invertibility.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let scale = m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()));
        if m[2][2].abs() <= 1e-12 * scale || scale == 0.0 {
            return Err(GeometryError::SingularMatrix);
        }
        let k = 1.0 / m[2][2];
        let mut n = m;
        n.iter_mut().flatten().for_each(|v| *v *= k);
        n[2][2] = 1.0;
        if linalg::mat3_det(&n).abs() <= DET_EPS {
            return Err(GeometryError::SingularMatrix);
        }
        Ok(Self { m: n })
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::from_matrix([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]] }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn determinant(&self) -> f64 {
        linalg::mat3_det(&self.m)
    }

    /// Row-major 9-element representation used in JSON.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(linalg::mat3_mul(&self.m, &first.m))
    }
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(deserializer)?;
        Homography::from_row_major(v).map_err(serde::de::Error::custom)
    }
}

/// Homography taking each `src[k]` onto `dst[k]`.
///
/// Both point sets are shifted to their centroid and scaled to mean distance
/// `sqrt(2)` before the 8x8 system (with `h22 = 1`) is solved; the result is
/// mapped back to pixel coordinates.
pub fn homography_from_points(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Homography, GeometryError> {
    if !src.iter().chain(dst.iter()).all(Point2::is_finite) {
        return Err(GeometryError::NonFinite);
    }
    let ts = normalizing_transform(src).ok_or(GeometryError::DegenerateQuad)?;
    let td = normalizing_transform(dst).ok_or(GeometryError::DegenerateQuad)?;
    let apply = |t: &[[f64; 3]; 3], p: &Point2| (t[0][0] * p.x + t[0][2], t[1][1] * p.y + t[1][2]);

    let mut a = [[0.0; 8]; 8];
    let mut b = [0.0; 8];
    for k in 0..4 {
        let (x, y) = apply(&ts, &src[k]);
        let (u, v) = apply(&td, &dst[k]);
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        b[2 * k] = u;
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * k + 1] = v;
    }
    let h = linalg::solve(a, b).ok_or(GeometryError::DegenerateQuad)?;
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]];
    let td_inv = linalg::mat3_inverse(&td).ok_or(GeometryError::DegenerateQuad)?;
    let m = linalg::mat3_mul(&td_inv, &linalg::mat3_mul(&hn, &ts));
    Homography::from_matrix(m).map_err(|_| GeometryError::DegenerateQuad)
}

fn normalizing_transform(pts: &[Point2; 4]) -> Option<[[f64; 3]; 3]> {
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / 4.0;
    if mean_dist <= 0.0 || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

/// Homography mapping the corners of `src` onto the corners of `dst`.
pub fn homography_from_quads(src: &Quad, dst: &Quad) -> Result<Homography, GeometryError> {
    homography_from_points(src.corners(), dst.corners())
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    let m = &h.m;
    let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    if w.abs() <= DEPTH_EPS {
        return Err(GeometryError::PointAtInfinity(w));
    }
    Ok(Point2::new(
        (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
        (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
    ))
}

pub fn invert_homography(h: &Homography) -> Result<Homography, GeometryError> {
    if h.determinant().abs() <= DET_EPS {
        return Err(GeometryError::SingularMatrix);
    }
    let inv = linalg::mat3_inverse(&h.m).ok_or(GeometryError::SingularMatrix)?;
    Homography::from_matrix(inv)
}

/// A `width x height` raster of class labels, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyMask);
        }
        if labels.len() != width * height {
            return Err(GeometryError::MaskSize { width, height, got: labels.len() });
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Result<Self, GeometryError> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Label at signed coordinates, `None` outside the raster.
    pub fn get_checked(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn same_dims(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn label_set(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }

    /// Iterates `(x, y, label)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        let w = self.width;
        self.labels.iter().enumerate().map(move |(i, &l)| (i % w, i / w, l))
    }

    pub fn map_labels(&self, f: impl Fn(u8) -> u8) -> LabelMask {
        LabelMask { width: self.width, height: self.height, labels: self.labels.iter().map(|&l| f(l)).collect() }
    }
}

/// Pulls each output pixel through `h^-1` and copies the nearest source label;
/// pixels landing outside the source (or at infinity) receive `fill`.
pub fn warp_mask(
    src: &LabelMask,
    h: &Homography,
    out_w: usize,
    out_h: usize,
    fill: u8,
) -> Result<LabelMask, GeometryError> {
    let inv = invert_homography(h)?;
    let mut out = LabelMask::filled(out_w, out_h, fill)?;
    for y in 0..out_h {
        for x in 0..out_w {
            if let Ok(p) = apply_homography(&inv, Point2::new(x as f64, y as f64)) {
                if let Some(l) = nearest_label(src, p) {
                    out.set(x, y, l);
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour lookup at a real-valued position.
pub(crate) fn nearest_label(mask: &LabelMask, p: Point2) -> Option<u8> {
    let (rx, ry) = (p.x.round(), p.y.round());
    if !(rx >= 0.0 && ry >= 0.0 && rx < mask.width as f64 && ry < mask.height as f64) {
        return None;
    }
    Some(mask.get(rx as usize, ry as usize))
}

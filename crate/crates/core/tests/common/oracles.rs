//! Independent reference computations used to cross-check the library.

use floorlevel::geometry::{LabelMask, Line5Tuple, Point2};
use floorlevel::metrics::ConfusionCounts;
use rand::Rng;

/// Closed-form projective map of the unit square onto `q` (corners in
/// the order (0,0), (1,0), (1,1), (0,1)), as in Heckbert's derivation.
pub fn square_to_quad(q: &[Point2; 4]) -> [[f64; 3]; 3] {
    let [p0, p1, p2, p3] = *q;
    let sx = p0.x - p1.x + p2.x - p3.x;
    let sy = p0.y - p1.y + p2.y - p3.y;
    if sx.abs() < 1e-15 && sy.abs() < 1e-15 {
        return [[p1.x - p0.x, p3.x - p0.x, p0.x], [p1.y - p0.y, p3.y - p0.y, p0.y], [0.0, 0.0, 1.0]];
    }
    let (dx1, dx2, dy1, dy2) = (p1.x - p2.x, p3.x - p2.x, p1.y - p2.y, p3.y - p2.y);
    let det = dx1 * dy2 - dx2 * dy1;
    let g = (sx * dy2 - dx2 * sy) / det;
    let h = (dx1 * sy - sx * dy1) / det;
    [
        [p1.x - p0.x + g * p1.x, p3.x - p0.x + h * p3.x, p0.x],
        [p1.y - p0.y + g * p1.y, p3.y - p0.y + h * p3.y, p0.y],
        [g, h, 1.0],
    ]
}

pub fn project(m: &[[f64; 3]; 3], p: Point2) -> Point2 {
    let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    Point2::new((m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w, (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w)
}

pub fn random_convex_quad(rng: &mut impl Rng) -> [Point2; 4] {
    // jittered rectangle corners stay convex for jitter below a quarter side
    let (x0, y0) = (rng.gen_range(0.0..200.0), rng.gen_range(0.0..150.0));
    let (w, h) = (rng.gen_range(80.0..280.0), rng.gen_range(60.0..200.0));
    let j = |rng: &mut dyn rand::RngCore, s: f64| (rng.gen::<f64>() - 0.5) * 0.4 * s;
    [
        Point2::new(x0 + j(rng, w), y0 + j(rng, h)),
        Point2::new(x0 + w + j(rng, w), y0 + j(rng, h)),
        Point2::new(x0 + w + j(rng, w), y0 + h + j(rng, h)),
        Point2::new(x0 + j(rng, w), y0 + h + j(rng, h)),
    ]
}

/// Uncentered normal equations solved by Cramer's rule.
pub fn normal_equation_fit(points: &[Point2]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.x).sum();
    let sy: f64 = points.iter().map(|p| p.y).sum();
    let sxx: f64 = points.iter().map(|p| p.x * p.x).sum();
    let sxy: f64 = points.iter().map(|p| p.x * p.y).sum();
    let det = n * sxx - sx * sx;
    ((sy * sxx - sx * sxy) / det, (n * sxy - sx * sy) / det)
}

/// One-vs-rest counts summed over every floor order `1..=10`.
pub fn pixel_counts_by_class(gt: &LabelMask, pred: &LabelMask) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for k in 1..=10u8 {
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            match (g == k, p == k) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    c
}

/// Segment pixels stepping along the major axis, with the minor offset
/// rounded half away from the start point.
pub fn segment_pixels(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let m = dx.abs().max(dy.abs());
    if m == 0 {
        return vec![(x0, y0)];
    }
    let offset = |i: i64, d: i64| d.signum() * ((2 * i * d.abs() + m) / (2 * m));
    (0..=m)
        .map(|i| {
            if dx.abs() >= dy.abs() {
                (x0 + dx.signum() * i, y0 + offset(i, dy))
            } else {
                (x0 + offset(i, dx), y0 + dy.signum() * i)
            }
        })
        .collect()
}

/// Confidence by scanning every mask pixel and testing membership in the
/// three-row band around the centerline.
pub fn confidence_by_scan(line: &Line5Tuple, gt: &LabelMask) -> Option<(usize, usize)> {
    let r = |v: f64| v.round() as i64;
    let centre = segment_pixels(r(line.xs()), r(line.ys()), r(line.xe()), r(line.ye()));
    let (mut hits, mut total) = (0, 0);
    for (x, y, l) in gt.iter() {
        let (x, y) = (x as i64, y as i64);
        if centre.iter().any(|&(cx, cy)| cx == x && (cy - y).abs() <= 1) {
            total += 1;
            hits += usize::from(l == line.order());
        }
    }
    (total > 0).then_some((hits, total))
}

/// Exact least-squares line through integer points `(X, Y) / scale`: the
/// normal-equation sums are formed in `i128`, leaving only the final
/// divisions to round.
pub fn exact_line_fit(points: &[(i64, i64)], scale: i64) -> (f64, f64) {
    let n = points.len() as i128;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0i128, 0i128, 0i128, 0i128);
    for &(x, y) in points {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    let beta1 = (n * sxy - sx * sy) as f64 / det as f64;
    let beta0 = (sy * sxx - sx * sxy) as f64 / (det as f64 * scale as f64);
    (beta0, beta1)
}

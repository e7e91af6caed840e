//! Synthetic scenes shared by the integration tests.
#![allow(dead_code)]

use floorlevel::augment::{paint_floor_lines, paint_quad};
use floorlevel::geometry::{LabelMask, Line5Tuple, Orientation, Point2, Quad};
use floorlevel::metrics::GtLine;
use floorlevel::palette::FACADE_WINDOW;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod oracles;

/// Points sampled on `count` lines through `vp`, returned per line.
pub fn lines_through_vp(
    vp: Point2,
    slopes: &[f64],
    x_range: (f64, f64),
    samples: usize,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<Point2>> {
    slopes
        .iter()
        .map(|&b| {
            (0..samples)
                .map(|j| {
                    let x = x_range.0 + (x_range.1 - x_range.0) * j as f64 / (samples - 1) as f64;
                    let y = b * (x - vp.x) + vp.y + noise_sigma * gaussian(rng);
                    Point2::new(x, y)
                })
                .collect()
        })
        .collect()
}

/// Box-Muller standard normal sample.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A random facade with 3-6 lines through a finite VP, as in the
/// refinement acceptance check.
pub struct VpCase {
    pub vp: Point2,
    pub slopes: Vec<f64>,
    pub x_range: (f64, f64),
}

pub fn random_vp_case(seed: u64) -> VpCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=6);
    let x_range = (100.0, 380.0);
    let right = rng.gen_bool(0.5);
    let vp_x = if right { x_range.1 + rng.gen_range(60.0..300.0) } else { x_range.0 - rng.gen_range(60.0..300.0) };
    let vp = Point2::new(vp_x, rng.gen_range(120.0..220.0));
    // heights at the facade edge nearest the viewer, spread over the image
    let near_x = if right { x_range.0 } else { x_range.1 };
    let slopes = (0..n)
        .map(|i| {
            let y_near = 40.0 + 300.0 * (i as f64 + rng.gen_range(0.1..0.9)) / n as f64;
            (y_near - vp.y) / (near_x - vp.x)
        })
        .collect();
    VpCase { vp, slopes, x_range }
}

/// One perspective facade with floor-level lines through a common VP.
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub facade: LabelMask,
    pub floor: LabelMask,
    pub vp: Point2,
    pub lines: Vec<Line5Tuple>,
    pub quad: Quad,
}

impl Scene {
    pub fn gt_lines(&self, facade_id: u32) -> Vec<GtLine> {
        self.lines.iter().map(|&line| GtLine { facade_id, line }).collect()
    }
}

/// Builds a facade spanning columns `x0..=x1` whose top and bottom edges and
/// `n_lines` floor lines all meet at `vp`. Floor order 1 is the bottom line.
pub fn perspective_scene(
    width: usize,
    height: usize,
    x0: usize,
    x1: usize,
    vp: Point2,
    n_lines: usize,
    orientation: Orientation,
    rng: &mut impl Rng,
) -> Scene {
    let near_x = if (vp.x - x0 as f64).abs() > (vp.x - x1 as f64).abs() { x0 as f64 } else { x1 as f64 };
    let slope_for = |y_near: f64| (y_near - vp.y) / (near_x - vp.x);
    let top_y = rng.gen_range(20.0..40.0);
    let bottom_y = height as f64 - rng.gen_range(20.0..40.0);
    let (top, bottom) = (slope_for(top_y), slope_for(bottom_y));
    let y = |b: f64, x: f64| b * (x - vp.x) + vp.y;
    let quad = Quad::new(
        [
            Point2::new(x0 as f64, y(top, x0 as f64)),
            Point2::new(x1 as f64, y(top, x1 as f64)),
            Point2::new(x1 as f64, y(bottom, x1 as f64)),
            Point2::new(x0 as f64, y(bottom, x0 as f64)),
        ],
        orientation,
    )
    .expect("convex facade");

    let mut facade = LabelMask::filled(width, height, 0).unwrap();
    paint_quad(&mut facade, &quad, orientation.code());

    // floor lines evenly spread between the edges, with jitter
    let span = bottom_y - top_y;
    let mut lines = Vec::new();
    for k in 0..n_lines {
        let frac = (k as f64 + 0.5 + rng.gen_range(-0.2..0.2)) / n_lines as f64;
        let y_near = bottom_y - frac * span;
        let b = slope_for(y_near);
        let order = (k + 1) as u8;
        lines.push(Line5Tuple::new(x0 as f64, y(b, x0 as f64), x1 as f64, y(b, x1 as f64), order).unwrap());
    }
    // a few windows between the lines
    for k in 0..n_lines.saturating_sub(1) {
        let cx = (x0 + x1) / 2;
        let cy = ((lines[k].mean_y() + lines[k + 1].mean_y()) / 2.0) as usize;
        for yy in cy.saturating_sub(3)..cy + 3 {
            for xx in cx - 5..cx + 5 {
                facade.set(xx, yy, FACADE_WINDOW);
            }
        }
    }
    let mut floor = LabelMask::filled(width, height, 0).unwrap();
    paint_floor_lines(&mut floor, &lines, 3).unwrap();
    Scene { width, height, facade, floor, vp, lines, quad }
}

/// Random 480x360 single-facade scene, the round-trip acceptance fixture.
pub fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.gen_range(30..120);
    let x1 = rng.gen_range(330..450);
    let right = rng.gen_bool(0.5);
    let vp = if right {
        Point2::new(x1 as f64 + rng.gen_range(150.0..500.0), rng.gen_range(140.0..220.0))
    } else {
        Point2::new(x0 as f64 - rng.gen_range(150.0..500.0), rng.gen_range(140.0..220.0))
    };
    let orientation = if right { Orientation::Right } else { Orientation::Left };
    let n = rng.gen_range(3..=6);
    perspective_scene(480, 360, x0, x1, vp, n, orientation, &mut rng)
}

/// Uniformly random labels in `0..=max_label`.
pub fn random_mask(width: usize, height: usize, max_label: u8, rng: &mut impl Rng) -> LabelMask {
    let labels = (0..width * height).map(|_| rng.gen_range(0..=max_label)).collect();
    LabelMask::new(width, height, labels).unwrap()
}

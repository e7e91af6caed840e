//! Geometry post-processing: facade and line grouping, per-line least
//! squares, vanishing-point refinement and endpoint derivation.
//!
//! Mask cells are addressed by their integer indices, so a pixel in column
//! `x` and row `y` is the point `(x, y)`.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, LabelMask, Line5Tuple, Orientation, Point2};
use crate::io::{FacadeLines, LinesDocument};
use crate::palette::{is_floor_order, OTHER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocessError {
    #[error("facade mask is {0}x{1} but floor mask is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("need at least 2 pixels to fit a line, got {0}")]
    TooFewPixels(usize),
    #[error("x-spread {0} px is below 2 px")]
    DegenerateSpread(f64),
    #[error("vanishing-point refinement needs at least 2 lines, got {0}")]
    TooFewLines(usize),
    #[error("line groups belong to different facades")]
    MixedFacades,
    #[error("order-{order} line falls entirely outside facade {facade}")]
    LineOutsideFacade { facade: u32, order: u8 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Tunables of the post-processing stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub min_area: usize,
    pub connectivity: Connectivity,
    pub parallel_slope_eps: f64,
    pub convergence_tol: f64,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_area: 50,
            connectivity: Connectivity::Eight,
            parallel_slope_eps: 1e-4,
            convergence_tol: 1e-8,
            max_iters: 5000,
        }
    }
}

/// One connected facade instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FacadeRegion {
    pub id: u32,
    pub orientation: Orientation,
    /// Member pixels in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub x_min: usize,
    pub x_max: usize,
    pub y_min: usize,
    pub y_max: usize,
}

/// Connected components over all non-`other` facade labels. Each component
/// takes the majority orientation label inside it (ties go to the lower
/// code; components without orientation pixels are `front`). Components
/// smaller than `min_area` are dropped; ids are assigned in raster order of
/// each component's first pixel.
pub fn group_facades(mask: &LabelMask, min_area: usize, connectivity: Connectivity) -> Vec<FacadeRegion> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };

    for start in 0..w * h {
        if seen[start] || mask.labels()[start] == OTHER {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && mask.labels()[j] != OTHER {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if members.len() < min_area {
            continue;
        }
        members.sort_unstable();

        let mut votes: BTreeMap<Orientation, usize> = BTreeMap::new();
        for &i in &members {
            if let Some(o) = Orientation::from_code(mask.labels()[i]) {
                *votes.entry(o).or_insert(0) += 1;
            }
        }
        let orientation = votes
            .iter()
            .fold(None, |best: Option<(Orientation, usize)>, (&o, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((o, n)),
            })
            .map_or(Orientation::Front, |(o, _)| o);

        let pixels: Vec<(usize, usize)> = members.iter().map(|&i| (i % w, i / w)).collect();
        let x_min = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let x_max = pixels.iter().map(|p| p.0).max().unwrap_or(0);
        let y_min = pixels.first().map_or(0, |p| p.1);
        let y_max = pixels.last().map_or(0, |p| p.1);
        regions.push(FacadeRegion { id: regions.len() as u32, orientation, pixels, x_min, x_max, y_min, y_max });
    }
    regions
}

/// Pixels of one floor order inside one facade.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePixelGroup {
    pub facade_id: u32,
    pub order: u8,
    pub pixels: Vec<(usize, usize)>,
}

impl LinePixelGroup {
    pub fn points(&self) -> Vec<Point2> {
        self.pixels.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect()
    }
}

/// Buckets floor pixels by (containing facade, order). Pixels outside every
/// facade are dropped; disjoint blobs of one order in one facade end up in
/// the same group.
pub fn group_lines(floor_mask: &LabelMask, facades: &[FacadeRegion]) -> Vec<LinePixelGroup> {
    let (w, h) = (floor_mask.width(), floor_mask.height());
    let mut owner: Vec<Option<u32>> = vec![None; w * h];
    for f in facades {
        for &(x, y) in &f.pixels {
            if x < w && y < h {
                owner[y * w + x] = Some(f.id);
            }
        }
    }
    let mut buckets: BTreeMap<(u32, u8), Vec<(usize, usize)>> = BTreeMap::new();
    for (x, y, l) in floor_mask.iter() {
        if !is_floor_order(l) {
            continue;
        }
        if let Some(id) = owner[y * w + x] {
            buckets.entry((id, l)).or_default().push((x, y));
        }
    }
    buckets
        .into_iter()
        .map(|((facade_id, order), pixels)| LinePixelGroup { facade_id, order, pixels })
        .collect()
}

/// `y = beta0 + beta1 * x` with its residual sum of squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineFit {
    pub beta0: f64,
    pub beta1: f64,
    pub rss: f64,
}

impl PolylineFit {
    pub fn y_at(&self, x: f64) -> f64 {
        self.beta0 + self.beta1 * x
    }
}

/// Ordinary least squares of `y` on `x`, solved from the centered normal
/// equations.
pub fn polyfit_line(points: &[Point2]) -> Result<PolylineFit, PostprocessError> {
    if points.len() < 2 {
        return Err(PostprocessError::TooFewPixels(points.len()));
    }
    let (lo, hi) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    if hi - lo < 2.0 {
        return Err(PostprocessError::DegenerateSpread(hi - lo));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), p| {
        let dx = p.x - mx;
        (sxx + dx * dx, sxy + dx * (p.y - my))
    });
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    let rss = points.iter().map(|p| (p.y - beta0 - beta1 * p.x).powi(2)).sum();
    Ok(PolylineFit { beta0, beta1, rss })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VanishingPoint {
    Finite(Point2),
    /// All lines share one slope; the vanishing point is at infinity.
    Parallel,
}

impl VanishingPoint {
    pub fn point(&self) -> Option<Point2> {
        match self {
            VanishingPoint::Finite(p) => Some(*p),
            VanishingPoint::Parallel => None,
        }
    }
}

/// A fitted line, either anchored at a vanishing point or free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineModel {
    /// `y = slope * (x - anchor.x) + anchor.y`
    Anchored { slope: f64, anchor: Point2 },
    /// `y = intercept + slope * x`
    Free { slope: f64, intercept: f64 },
}

impl LineModel {
    pub fn slope(&self) -> f64 {
        match *self {
            LineModel::Anchored { slope, .. } | LineModel::Free { slope, .. } => slope,
        }
    }

    pub fn y_at(&self, x: f64) -> f64 {
        match *self {
            LineModel::Anchored { slope, anchor } => slope * (x - anchor.x) + anchor.y,
            LineModel::Free { slope, intercept } => intercept + slope * x,
        }
    }

    /// `x` where the line reaches height `y`; requires a nonzero slope.
    fn x_at(&self, y: f64) -> f64 {
        match *self {
            LineModel::Anchored { slope, anchor } => anchor.x + (y - anchor.y) / slope,
            LineModel::Free { slope, intercept } => (y - intercept) / slope,
        }
    }
}

impl From<PolylineFit> for LineModel {
    fn from(f: PolylineFit) -> Self {
        LineModel::Free { slope: f.beta1, intercept: f.beta0 }
    }
}

/// Outcome of the vanishing-point refinement for one facade.
#[derive(Debug, Clone, PartialEq)]
pub struct VpSolution {
    pub vp: VanishingPoint,
    /// Refined slopes, one per input group.
    pub slopes: Vec<f64>,
    /// Per-line fits before refinement.
    pub initial_fits: Vec<PolylineFit>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

impl VpSolution {
    /// Line model of group `i`.
    pub fn model(&self, i: usize) -> LineModel {
        match self.vp {
            VanishingPoint::Finite(anchor) => LineModel::Anchored { slope: self.slopes[i], anchor },
            VanishingPoint::Parallel => self.initial_fits[i].into(),
        }
    }
}

/// Data of the refinement problem in normalized coordinates.
struct VpProblem {
    /// `(u, v)` samples per line, `u = (x - x0) / s`, `v = (y - y0) / s`.
    lines: Vec<Vec<(f64, f64)>>,
}

impl VpProblem {
    /// Parameters are `[beta_1, .., beta_m, u_c, v_c]`.
    fn loss(&self, theta: &[f64]) -> f64 {
        let m = self.lines.len();
        let (uc, vc) = (theta[m], theta[m + 1]);
        self.lines
            .iter()
            .zip(theta)
            .map(|(pts, &b)| pts.iter().map(|&(u, v)| (v - b * (u - uc) - vc).powi(2)).sum::<f64>())
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.lines.len();
        let (uc, vc) = (theta[m], theta[m + 1]);
        let mut g = vec![0.0; m + 2];
        for (i, pts) in self.lines.iter().enumerate() {
            let b = theta[i];
            for &(u, v) in pts {
                let r = v - b * (u - uc) - vc;
                g[i] -= 2.0 * r * (u - uc);
                g[m] += 2.0 * r * b;
                g[m + 1] -= 2.0 * r;
            }
        }
        g
    }

    /// Diagonal of the Gauss-Newton curvature `2 J^T J`.
    fn curvature_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.lines.len();
        let uc = theta[m];
        let mut d = vec![0.0; m + 2];
        for (i, pts) in self.lines.iter().enumerate() {
            let b = theta[i];
            for &(u, _) in pts {
                d[i] += 2.0 * (u - uc) * (u - uc);
                d[m] += 2.0 * b * b;
                d[m + 1] += 2.0;
            }
        }
        d
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits all lines of one facade so that they meet in a common vanishing
/// point `(x_c, y_c)`, minimizing `sum_i sum_j (y_ij - b_i (x_ij - x_c) - y_c)^2`.
///
/// Slopes start from the per-line least-squares fits and the vanishing point
/// from the coordinate-wise median of the pairwise intersections. The
/// problem is solved in coordinates shifted to the sample minimum and scaled
/// by the larger sample extent. Each iteration takes a diagonally scaled
/// gradient step and halves it until the loss decreases sufficiently, so the
/// loss history never increases. Iteration stops when the relative decrease
/// drops below `convergence_tol` or after `max_iters` steps. If every pair
/// of initial slopes differs by less than `parallel_slope_eps`, the lines
/// are reported unrefined with [`VanishingPoint::Parallel`].
pub fn refine_vp(groups: &[LinePixelGroup], config: &PipelineConfig) -> Result<VpSolution, PostprocessError> {
    if groups.len() < 2 {
        return Err(PostprocessError::TooFewLines(groups.len()));
    }
    if groups.iter().any(|g| g.facade_id != groups[0].facade_id) {
        return Err(PostprocessError::MixedFacades);
    }
    let point_sets: Vec<Vec<Point2>> = groups.iter().map(LinePixelGroup::points).collect();
    refine_vp_points(&point_sets, config)
}

/// [`refine_vp`] on raw point sets.
pub fn refine_vp_points(lines: &[Vec<Point2>], config: &PipelineConfig) -> Result<VpSolution, PostprocessError> {
    if lines.len() < 2 {
        return Err(PostprocessError::TooFewLines(lines.len()));
    }
    let fits = lines.iter().map(|pts| polyfit_line(pts)).collect::<Result<Vec<_>, _>>()?;
    let fit_loss: f64 = fits.iter().map(|f| f.rss).sum();
    let m = fits.len();

    let mut max_gap: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            max_gap = max_gap.max((fits[i].beta1 - fits[j].beta1).abs());
        }
    }
    if max_gap < config.parallel_slope_eps {
        return Ok(VpSolution {
            vp: VanishingPoint::Parallel,
            slopes: fits.iter().map(|f| f.beta1).collect(),
            initial_fits: fits,
            initial_loss: fit_loss,
            final_loss: fit_loss,
            iterations: 0,
            loss_history: vec![fit_loss],
        });
    }

    let all = lines.iter().flatten();
    let (x0, x1, y0, y1) = all.fold((f64::MAX, f64::MIN, f64::MAX, f64::MIN), |(a, b, c, d), p| {
        (a.min(p.x), b.max(p.x), c.min(p.y), d.max(p.y))
    });
    let s = (x1 - x0).max(y1 - y0).max(1.0);
    let problem = VpProblem {
        lines: lines.iter().map(|pts| pts.iter().map(|p| ((p.x - x0) / s, (p.y - y0) / s)).collect()).collect(),
    };

    // initial intercepts in normalized coordinates
    let b: Vec<f64> = fits.iter().map(|f| (f.beta0 + f.beta1 * x0 - y0) / s).collect();
    let (mut us, mut vs) = (Vec::new(), Vec::new());
    for i in 0..m {
        for j in i + 1..m {
            let db = fits[i].beta1 - fits[j].beta1;
            if db.abs() < config.parallel_slope_eps {
                continue;
            }
            let u = (b[j] - b[i]) / db;
            us.push(u);
            vs.push(b[i] + fits[i].beta1 * u);
        }
    }
    let mut theta: Vec<f64> = fits.iter().map(|f| f.beta1).collect();
    theta.push(median(&mut us));
    theta.push(median(&mut vs));

    let to_pixels = |l: f64| l * s * s;
    let mut loss = problem.loss(&theta);
    let mut history = vec![to_pixels(loss)];
    let initial_loss = to_pixels(loss);
    let mut iterations = 0;
    let mut step = 1.0;

    while iterations < config.max_iters && loss > 0.0 {
        let g = problem.gradient(&theta);
        let d = problem.curvature_diagonal(&theta);
        let dir: Vec<f64> = g.iter().zip(&d).map(|(gi, di)| if *di > 0.0 { gi / di } else { *gi }).collect();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope <= 0.0 {
            break;
        }

        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, di)| t - alpha * di).collect();
            let trial_loss = problem.loss(&trial);
            if trial_loss <= loss - 1e-4 * alpha * slope {
                accepted = Some((trial, trial_loss));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        let rel_change = (loss - next_loss) / loss;
        theta = next;
        loss = next_loss;
        iterations += 1;
        history.push(to_pixels(loss));
        step = (alpha * 2.0).min(1.0);
        if rel_change < config.convergence_tol {
            break;
        }
    }

    let vp = Point2::new(x0 + theta[m] * s, y0 + theta[m + 1] * s);
    Ok(VpSolution {
        vp: VanishingPoint::Finite(vp),
        slopes: theta[..m].to_vec(),
        initial_fits: fits,
        initial_loss,
        final_loss: to_pixels(loss),
        iterations,
        loss_history: history,
    })
}

/// Evaluates `model` across the facade's horizontal range and keeps the
/// part that lies within its vertical range.
pub fn derive_endpoints(facade: &FacadeRegion, model: &LineModel, order: u8) -> Result<Line5Tuple, PostprocessError> {
    let (x_lo, x_hi) = (facade.x_min as f64, facade.x_max as f64);
    let (y_lo, y_hi) = (facade.y_min as f64, facade.y_max as f64);
    let outside = PostprocessError::LineOutsideFacade { facade: facade.id, order };
    let slope = model.slope();
    let (a, b) = if slope == 0.0 {
        let y = model.y_at(x_lo);
        if y < y_lo || y > y_hi {
            return Err(outside);
        }
        (x_lo, x_hi)
    } else {
        let (xa, xb) = (model.x_at(y_lo), model.x_at(y_hi));
        let (lo, hi) = (xa.min(xb).max(x_lo), xa.max(xb).min(x_hi));
        if lo > hi {
            return Err(outside);
        }
        (lo, hi)
    };
    Ok(Line5Tuple::new(a, model.y_at(a), b, model.y_at(b), order)?)
}

/// Sorts lines bottom to top (mean `y` descending, ties by incoming order)
/// and renumbers them `1, 2, ..` unless their orders already increase
/// strictly along that sequence.
pub fn enforce_order(lines: &[Line5Tuple]) -> Vec<Line5Tuple> {
    enforce_order_indexed(lines).into_iter().map(|(_, l)| l).collect()
}

/// [`enforce_order`] that also reports each output line's input index.
pub fn enforce_order_indexed(lines: &[Line5Tuple]) -> Vec<(usize, Line5Tuple)> {
    let mut idx: Vec<usize> = (0..lines.len()).collect();
    idx.sort_by(|&a, &b| {
        lines[b].mean_y().total_cmp(&lines[a].mean_y()).then(lines[a].order().cmp(&lines[b].order()))
    });
    let consistent = idx.windows(2).all(|w| lines[w[0]].order() < lines[w[1]].order());
    idx.into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let line = if consistent {
                lines[i]
            } else {
                let order = u8::try_from(rank + 1).unwrap_or(u8::MAX).min(crate::geometry::MAX_FLOOR_ORDER);
                lines[i].with_order(order).expect("valid order")
            };
            (i, line)
        })
        .collect()
}

/// Everything recovered for one facade.
#[derive(Debug, Clone, PartialEq)]
pub struct FacadeResult {
    pub region: FacadeRegion,
    pub vp: Option<Point2>,
    /// Output lines, bottom to top.
    pub lines: Vec<Line5Tuple>,
    /// Model of each output line, aligned with `lines`.
    pub models: Vec<LineModel>,
    pub solution: Option<VpSolution>,
    /// Problems met while processing this facade; affected lines are dropped.
    pub errors: Vec<PostprocessError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub width: usize,
    pub height: usize,
    pub facades: Vec<FacadeResult>,
}

impl PipelineResult {
    pub fn to_document(&self, image: &str) -> LinesDocument {
        LinesDocument {
            image: image.to_string(),
            facades: self
                .facades
                .iter()
                .map(|f| FacadeLines {
                    id: f.region.id,
                    orientation: f.region.orientation,
                    vp: f.vp,
                    lines: f.lines.clone(),
                })
                .collect(),
        }
    }
}

fn process_facade(facade: FacadeRegion, groups: Vec<LinePixelGroup>, config: &PipelineConfig) -> FacadeResult {
    let mut errors = Vec::new();
    let mut fitted: Vec<(LinePixelGroup, PolylineFit)> = Vec::new();
    for g in groups {
        match polyfit_line(&g.points()) {
            Ok(fit) => fitted.push((g, fit)),
            Err(e) => errors.push(e),
        }
    }

    let mut solution = None;
    let mut models: Vec<LineModel> = fitted.iter().map(|(_, f)| (*f).into()).collect();
    if fitted.len() >= 2 {
        let groups: Vec<LinePixelGroup> = fitted.iter().map(|(g, _)| g.clone()).collect();
        match refine_vp(&groups, config) {
            Ok(sol) => {
                models = (0..groups.len()).map(|i| sol.model(i)).collect();
                solution = Some(sol);
            }
            Err(e) => errors.push(e),
        }
    }
    let vp = solution.as_ref().and_then(|s| s.vp.point());

    let mut lines = Vec::new();
    let mut kept_models = Vec::new();
    for ((g, _), model) in fitted.iter().zip(&models) {
        match derive_endpoints(&facade, model, g.order) {
            Ok(l) => {
                lines.push(l);
                kept_models.push(*model);
            }
            Err(e) => errors.push(e),
        }
    }
    let ordered = enforce_order_indexed(&lines);
    let models = ordered.iter().map(|&(i, _)| kept_models[i]).collect();
    let lines = ordered.into_iter().map(|(_, l)| l).collect();
    FacadeResult { region: facade, vp, lines, models, solution, errors }
}

/// Full post-processing of one image. Facades are processed independently;
/// a failure in one facade is recorded in its [`FacadeResult::errors`].
pub fn run_pipeline(
    facade_mask: &LabelMask,
    floor_mask: &LabelMask,
    config: &PipelineConfig,
) -> Result<PipelineResult, PostprocessError> {
    if !facade_mask.same_dims(floor_mask) {
        return Err(PostprocessError::DimensionMismatch(
            facade_mask.width(),
            facade_mask.height(),
            floor_mask.width(),
            floor_mask.height(),
        ));
    }
    let facades = group_facades(facade_mask, config.min_area, config.connectivity);
    let mut by_facade: BTreeMap<u32, Vec<LinePixelGroup>> = BTreeMap::new();
    for g in group_lines(floor_mask, &facades) {
        by_facade.entry(g.facade_id).or_default().push(g);
    }
    let jobs: Vec<(FacadeRegion, Vec<LinePixelGroup>)> = facades
        .into_iter()
        .map(|f| {
            let groups = by_facade.remove(&f.id).unwrap_or_default();
            (f, groups)
        })
        .collect();
    let results = jobs.into_par_iter().map(|(f, g)| process_facade(f, g, config)).collect();
    Ok(PipelineResult { width: facade_mask.width(), height: facade_mask.height(), facades: results })
}

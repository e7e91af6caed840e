//! Pixel-wise and line-wise F1 scores, with lower (orders 1-3) and upper
//! (orders 4 and above) floor splits.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{LabelMask, Line5Tuple};
use crate::palette::is_floor_order;

/// A predicted line counts as detected when its confidence exceeds this.
pub const CI_THRESHOLD: f64 = 0.5;
/// Highest order counted as a lower floor.
pub const LOWER_FLOOR_MAX: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("masks differ in size ({0}x{1} vs {2}x{3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("line of order {0} covers no pixel of the mask")]
    EmptyRaster(u8),
    #[error("dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// `2TP / (2TP + FP + FN)`, or 1 when all counts are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts { tp: self.tp + other.tp, fp: self.fp + other.fp, fn_: self.fn_ + other.fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderBand {
    Lower,
    Upper,
    All,
}

impl OrderBand {
    pub const ALL: [OrderBand; 3] = [OrderBand::Lower, OrderBand::Upper, OrderBand::All];

    pub fn contains(self, order: u8) -> bool {
        is_floor_order(order)
            && match self {
                OrderBand::Lower => order <= LOWER_FLOOR_MAX,
                OrderBand::Upper => order > LOWER_FLOOR_MAX,
                OrderBand::All => true,
            }
    }
}

/// Counts over `(pixel, order)` pairs whose order falls in `band`.
pub fn pixel_counts(gt: &LabelMask, pred: &LabelMask, band: OrderBand) -> Result<ConfusionCounts, MetricsError> {
    if !gt.same_dims(pred) {
        return Err(MetricsError::DimensionMismatch(gt.width(), gt.height(), pred.width(), pred.height()));
    }
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        let (g_in, p_in) = (band.contains(g), band.contains(p));
        if g_in && p_in && g == p {
            c.tp += 1;
        } else {
            c.fp += u64::from(p_in);
            c.fn_ += u64::from(g_in);
        }
    }
    Ok(c)
}

pub fn pixel_f1(gt: &LabelMask, pred: &LabelMask) -> Result<(ConfusionCounts, f64), MetricsError> {
    let c = pixel_counts(gt, pred, OrderBand::All)?;
    Ok((c, c.f1()))
}

/// Integer Bresenham segment between two pixels, inclusive.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Pixels of the three-pixel-wide raster of `line`: the Bresenham
/// centerline between the rounded endpoints, dilated by one row above and
/// below, deduplicated and clipped to `width x height`. Sorted row-major.
pub fn line_raster(line: &Line5Tuple, width: usize, height: usize) -> Vec<(usize, usize)> {
    let r = |v: f64| v.round() as i64;
    let mut set = BTreeSet::new();
    for (x, y) in bresenham(r(line.xs()), r(line.ys()), r(line.xe()), r(line.ye())) {
        for yy in [y - 1, y, y + 1] {
            if x >= 0 && yy >= 0 && x < width as i64 && yy < height as i64 {
                set.insert((yy as usize, x as usize));
            }
        }
    }
    set.into_iter().map(|(y, x)| (x, y)).collect()
}

/// Fraction of the line's raster pixels whose ground-truth label equals the
/// line's order.
pub fn line_confidence(line: &Line5Tuple, gt: &LabelMask) -> Result<f64, MetricsError> {
    let px = line_raster(line, gt.width(), gt.height());
    if px.is_empty() {
        return Err(MetricsError::EmptyRaster(line.order()));
    }
    let hits = px.iter().filter(|&&(x, y)| gt.get(x, y) == line.order()).count();
    Ok(hits as f64 / px.len() as f64)
}

/// A ground-truth line together with the facade it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtLine {
    pub facade_id: u32,
    pub line: Line5Tuple,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutcome {
    pub order: u8,
    pub confidence: f64,
    /// Index into the ground-truth lines when this prediction is a true positive.
    pub matched: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineMatching {
    pub predictions: Vec<PredictionOutcome>,
    /// Whether each ground-truth line was consumed by a prediction.
    pub gt_matched: Vec<bool>,
}

impl LineMatching {
    pub fn counts(&self, gt_lines: &[GtLine], band: OrderBand) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for p in self.predictions.iter().filter(|p| band.contains(p.order)) {
            if p.matched.is_some() {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for (g, &hit) in gt_lines.iter().zip(&self.gt_matched) {
            if !hit && band.contains(g.line.order()) {
                c.fn_ += 1;
            }
        }
        c
    }
}

fn x_overlap(a: &Line5Tuple, b: &Line5Tuple) -> f64 {
    a.xe().min(b.xe()) - a.xs().max(b.xs())
}

/// Greedy one-to-one matching in prediction order. A prediction with
/// confidence above [`CI_THRESHOLD`] is a true positive when the
/// ground-truth line of the same order it overlaps most horizontally
/// (then closest vertically, then lowest facade id) is still unconsumed;
/// everything else is a false positive.
pub fn match_lines(pred_lines: &[Line5Tuple], gt_lines: &[GtLine], gt: &LabelMask) -> Result<LineMatching, MetricsError> {
    let mut gt_matched = vec![false; gt_lines.len()];
    let mut predictions = Vec::with_capacity(pred_lines.len());
    for pred in pred_lines {
        let confidence = line_confidence(pred, gt)?;
        let mut matched = None;
        if confidence > CI_THRESHOLD {
            let best = gt_lines
                .iter()
                .enumerate()
                .filter(|(_, g)| g.line.order() == pred.order() && x_overlap(&g.line, pred) >= 0.0)
                .map(|(i, g)| {
                    let mid = 0.5 * (pred.xs().max(g.line.xs()) + pred.xe().min(g.line.xe()));
                    let dy = (pred.y_at(mid) - g.line.y_at(mid)).abs();
                    (i, x_overlap(&g.line, pred), dy, g.facade_id)
                })
                .min_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
            if let Some((i, ..)) = best {
                if !gt_matched[i] {
                    gt_matched[i] = true;
                    matched = Some(i);
                }
            }
        }
        predictions.push(PredictionOutcome { order: pred.order(), confidence, matched });
    }
    Ok(LineMatching { predictions, gt_matched })
}

pub fn line_f1(
    pred_lines: &[Line5Tuple],
    gt_lines: &[GtLine],
    gt: &LabelMask,
) -> Result<(ConfusionCounts, f64), MetricsError> {
    let c = match_lines(pred_lines, gt_lines, gt)?.counts(gt_lines, OrderBand::All);
    Ok((c, c.f1()))
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub pred_mask: LabelMask,
    pub gt_mask: LabelMask,
    pub pred_lines: Vec<Line5Tuple>,
    pub gt_lines: Vec<GtLine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandScore {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub f1: f64,
}

impl From<ConfusionCounts> for BandScore {
    fn from(counts: ConfusionCounts) -> Self {
        Self { counts, f1: counts.f1() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandScores {
    pub lower: BandScore,
    pub upper: BandScore,
    pub overall: BandScore,
}

impl BandScores {
    fn from_counts(c: &[ConfusionCounts; 3]) -> Self {
        Self { lower: c[0].into(), upper: c[1].into(), overall: c[2].into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Always `"micro"`: counts are pooled over images before scoring.
    pub averaging: &'static str,
    pub images: usize,
    pub pixel: BandScores,
    pub line: BandScores,
}

/// Per-image counts in [`OrderBand::ALL`] order: `(pixel, line)`.
pub fn image_counts(item: &EvalItem) -> Result<([ConfusionCounts; 3], [ConfusionCounts; 3]), MetricsError> {
    let mut pixel = [ConfusionCounts::default(); 3];
    let mut line = [ConfusionCounts::default(); 3];
    let matching = match_lines(&item.pred_lines, &item.gt_lines, &item.gt_mask)?;
    for (k, band) in OrderBand::ALL.into_iter().enumerate() {
        pixel[k] = pixel_counts(&item.gt_mask, &item.pred_mask, band)?;
        line[k] = matching.counts(&item.gt_lines, band);
    }
    Ok((pixel, line))
}

/// Micro-averaged scores over a dataset.
pub fn evaluate_dataset(items: &[EvalItem]) -> Result<EvalReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let per_image = items.par_iter().map(image_counts).collect::<Result<Vec<_>, _>>()?;
    let mut pixel = [ConfusionCounts::default(); 3];
    let mut line = [ConfusionCounts::default(); 3];
    for (p, l) in &per_image {
        for k in 0..3 {
            pixel[k] = pixel[k].merge(&p[k]);
            line[k] = line[k].merge(&l[k]);
        }
    }
    Ok(EvalReport {
        averaging: "micro",
        images: items.len(),
        pixel: BandScores::from_counts(&pixel),
        line: BandScores::from_counts(&line),
    })
}

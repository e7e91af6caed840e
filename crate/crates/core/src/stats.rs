//! Dataset characterization: orientation and floor-order histograms,
//! per-order pixel counts, vertical-bound distributions and the class
//! entropy table.
//!
//! Vertical bounds are counted from the bottom of the image. With `n`
//! bounds over `h` rows each bound holds `h / n` rows (floor division) and
//! the remainder rows are added to the topmost bound.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{LabelMask, Orientation, MAX_FLOOR_ORDER};
use crate::io::AnnotationRecord;
use crate::palette::is_floor_order;

/// Number of floor orders covered by the entropy table.
pub const ENTROPY_ORDERS: usize = 6;
/// Strata names of the four-bound entropy table, bottom to top.
pub const BOUND_NAMES: [&str; 4] = ["low", "mid-low", "mid-high", "high"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("number of bounds must be at least 1")]
    NoBounds,
    #[error("dataset is empty")]
    EmptyDataset,
}

/// `-sum p_i log10 p_i`, with `0 log 0 = 0`.
pub fn class_entropy(p: &[f64]) -> Result<f64, StatsError> {
    let mut h = 0.0;
    for &pi in p {
        if !(0.0..=1.0).contains(&pi) {
            return Err(StatsError::ProbabilityOutOfRange(pi));
        }
        if pi > 0.0 {
            h -= pi * pi.log10();
        }
    }
    Ok(h.max(0.0))
}

/// Bound index (0 = bottom) of image row `row` (0 = top).
pub fn bound_of_row(row: usize, height: usize, n_bounds: usize) -> usize {
    let per_bound = height / n_bounds;
    if per_bound == 0 {
        return n_bounds - 1;
    }
    let from_bottom = height - 1 - row;
    (from_bottom / per_bound).min(n_bounds - 1)
}

/// Per-(order, bound) pixel counts, accumulated over any number of masks.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCounts {
    n_bounds: usize,
    /// `counts[order][bound]` for codes `0..=MAX_FLOOR_ORDER`.
    counts: Vec<Vec<u64>>,
    /// Total pixels (any label) per bound.
    totals: Vec<u64>,
}

impl BoundCounts {
    pub fn new(n_bounds: usize) -> Result<Self, StatsError> {
        if n_bounds == 0 {
            return Err(StatsError::NoBounds);
        }
        Ok(Self {
            n_bounds,
            counts: vec![vec![0; n_bounds]; MAX_FLOOR_ORDER as usize + 1],
            totals: vec![0; n_bounds],
        })
    }

    pub fn add(&mut self, mask: &LabelMask) {
        let (w, h) = (mask.width(), mask.height());
        for y in 0..h {
            let b = bound_of_row(y, h, self.n_bounds);
            self.totals[b] += w as u64;
            for x in 0..w {
                let l = mask.get(x, y);
                if is_floor_order(l) {
                    self.counts[l as usize][b] += 1;
                }
            }
        }
    }

    pub fn n_bounds(&self) -> usize {
        self.n_bounds
    }

    pub fn count(&self, order: u8, bound: usize) -> u64 {
        self.counts[order as usize][bound]
    }

    pub fn order_total(&self, order: u8) -> u64 {
        self.counts[order as usize].iter().sum()
    }

    pub fn bound_total(&self, bound: usize) -> u64 {
        self.totals[bound]
    }

    pub fn total(&self) -> u64 {
        self.totals.iter().sum()
    }
}

/// For each floor order present, the fraction of its pixels in each bound
/// (index 0 = low).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticalBoundDistribution {
    pub n_bounds: usize,
    pub ratios: BTreeMap<u8, Vec<f64>>,
}

impl VerticalBoundDistribution {
    pub fn from_counts(counts: &BoundCounts) -> Self {
        let mut ratios = BTreeMap::new();
        for order in 1..=MAX_FLOOR_ORDER {
            let total = counts.order_total(order);
            if total == 0 {
                continue;
            }
            let r = (0..counts.n_bounds()).map(|b| counts.count(order, b) as f64 / total as f64).collect();
            ratios.insert(order, r);
        }
        Self { n_bounds: counts.n_bounds(), ratios }
    }
}

pub fn vertical_bound_distribution(mask: &LabelMask, n_bounds: usize) -> Result<VerticalBoundDistribution, StatsError> {
    let mut counts = BoundCounts::new(n_bounds)?;
    counts.add(mask);
    Ok(VerticalBoundDistribution::from_counts(&counts))
}

/// Pooled distribution over several masks.
pub fn vertical_bound_distribution_pooled(
    masks: &[LabelMask],
    n_bounds: usize,
) -> Result<VerticalBoundDistribution, StatsError> {
    let mut counts = BoundCounts::new(n_bounds)?;
    masks.iter().for_each(|m| counts.add(m));
    Ok(VerticalBoundDistribution::from_counts(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub given: String,
    pub probabilities: [f64; ENTROPY_ORDERS],
    pub entropy: f64,
}

impl EntropyRow {
    pub fn from_probabilities(given: impl Into<String>, probabilities: [f64; ENTROPY_ORDERS]) -> Result<Self, StatsError> {
        let entropy = class_entropy(&probabilities)?;
        Ok(Self { given: given.into(), probabilities, entropy })
    }
}

/// Entropy table: the whole-image row followed by the four bound rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    /// Unweighted mean of the bound-row entropies.
    pub average_bound_entropy: f64,
}

impl EntropyReport {
    pub fn from_rows(image: EntropyRow, bounds: Vec<EntropyRow>) -> Self {
        let average_bound_entropy = if bounds.is_empty() {
            0.0
        } else {
            bounds.iter().map(|r| r.entropy).sum::<f64>() / bounds.len() as f64
        };
        let mut rows = vec![image];
        rows.extend(bounds);
        Self { rows, average_bound_entropy }
    }

    pub fn row(&self, given: &str) -> Option<&EntropyRow> {
        self.rows.iter().find(|r| r.given == given)
    }
}

/// Probabilities of orders 1..=6 among all pixels of each stratum, pooled
/// over the masks, with one entropy per stratum.
pub fn bound_probability_table(masks: &[LabelMask]) -> Result<EntropyReport, StatsError> {
    if masks.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    let mut counts = BoundCounts::new(BOUND_NAMES.len())?;
    masks.iter().for_each(|m| counts.add(m));

    let probs = |num: &dyn Fn(u8) -> u64, den: u64| -> [f64; ENTROPY_ORDERS] {
        let mut p = [0.0; ENTROPY_ORDERS];
        if den > 0 {
            for (i, slot) in p.iter_mut().enumerate() {
                *slot = num(i as u8 + 1) as f64 / den as f64;
            }
        }
        p
    };
    let image = EntropyRow::from_probabilities("image", probs(&|o| counts.order_total(o), counts.total()))?;
    let bounds = BOUND_NAMES
        .iter()
        .enumerate()
        .map(|(b, name)| EntropyRow::from_probabilities(*name, probs(&|o| counts.count(o, b), counts.bound_total(b))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EntropyReport::from_rows(image, bounds))
}

pub fn orientation_histogram(annotations: &[AnnotationRecord]) -> BTreeMap<Orientation, usize> {
    let mut hist = BTreeMap::new();
    for q in annotations.iter().flat_map(|a| a.facades.iter()) {
        *hist.entry(q.orientation()).or_insert(0) += 1;
    }
    hist
}

/// Histogram of the highest floor order per mask; masks without floor
/// pixels are skipped.
pub fn highest_floor_histogram(samples: &[LabelMask]) -> BTreeMap<u8, usize> {
    let mut hist = BTreeMap::new();
    for m in samples {
        if let Some(top) = m.labels().iter().copied().filter(|&l| is_floor_order(l)).max() {
            *hist.entry(top).or_insert(0) += 1;
        }
    }
    hist
}

/// Average number of pixels per floor order, over all masks.
pub fn pixels_per_order(masks: &[LabelMask]) -> BTreeMap<u8, f64> {
    let mut totals: BTreeMap<u8, u64> = BTreeMap::new();
    for l in masks.iter().flat_map(|m| m.labels().iter().copied()) {
        if is_floor_order(l) {
            *totals.entry(l).or_insert(0) += 1;
        }
    }
    totals.into_iter().map(|(o, n)| (o, n as f64 / masks.len() as f64)).collect()
}

/// Everything the `stats` command reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub images: usize,
    pub orientation_histogram: BTreeMap<String, usize>,
    pub highest_floor_histogram: BTreeMap<u8, usize>,
    pub pixels_per_order: BTreeMap<u8, f64>,
    pub vertical_bounds: VerticalBoundDistribution,
    pub entropy: EntropyReport,
}

pub fn build_report(floor_masks: &[LabelMask], annotations: &[AnnotationRecord]) -> Result<StatsReport, StatsError> {
    Ok(StatsReport {
        images: floor_masks.len(),
        orientation_histogram: orientation_histogram(annotations)
            .into_iter()
            .map(|(o, n)| (o.as_str().to_string(), n))
            .collect(),
        highest_floor_histogram: highest_floor_histogram(floor_masks),
        pixels_per_order: pixels_per_order(floor_masks),
        vertical_bounds: vertical_bound_distribution_pooled(floor_masks, BOUND_NAMES.len())?,
        entropy: bound_probability_table(floor_masks)?,
    })
}

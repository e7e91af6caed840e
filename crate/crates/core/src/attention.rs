//! Height-attention layer, softmax cross-entropy and the fused two-branch
//! loss, at a scale small enough to verify every gradient numerically.
//!
//! The layer gates a higher-level feature map row by row:
//!
//! 1. mean-pool the lower-level map over width (`C_l x H_l`),
//! 2. 1-D convolution over height with zero same-padding (`C_h x H_l`),
//! 3. linear interpolation over height to `H_h` (half-pixel centers),
//! 4. sigmoid, giving the attention map (`C_h x H_h`),
//! 5. `refined[c][h][w] = attention[c][h] * higher[c][h][w]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{LabelMask, MAX_FLOOR_ORDER};
use crate::stats::bound_of_row;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("gradient shape {got:?} does not match the cached forward output {expected:?}")]
    StaleCache { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("label {label} at ({x}, {y}) is not below the channel count {channels}")]
    LabelOutOfRange { label: u8, x: usize, y: usize, channels: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// `channels x height x width` activations, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, AttentionError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(AttentionError::DimensionMismatch("feature map dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(AttentionError::DimensionMismatch(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AttentionError::DimensionMismatch("feature map contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn random(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let data = (0..channels * height * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let i = self.idx(c, h, w);
        self.data[i] = v;
    }
}

/// Weights of the 1-D height convolution, `out x in x kernel`, plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HaParams {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl HaParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        if kernel.is_multiple_of(2) {
            return Err(AttentionError::InvalidParams(format!("kernel size {kernel} must be odd")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(AttentionError::InvalidParams("channel counts must be positive".into()));
        }
        if weight.len() != out_channels * in_channels * kernel || bias.len() != out_channels {
            return Err(AttentionError::InvalidParams("weight or bias length does not match the shape".into()));
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(AttentionError::InvalidParams("non-finite weight".into()));
        }
        Ok(Self { in_channels, out_channels, kernel, weight, bias })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self, AttentionError> {
        Self::new(in_channels, out_channels, kernel, vec![0.0; out_channels * in_channels * kernel], vec![0.0; out_channels])
    }

    pub fn random(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self, AttentionError> {
        let weight = (0..out_channels * in_channels * kernel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = (0..out_channels).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self::new(in_channels, out_channels, kernel, weight, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn kernel(&self) -> usize {
        self.kernel
    }
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }
    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    fn w(&self, o: usize, c: usize, t: usize) -> f64 {
        self.weight[(o * self.in_channels + c) * self.kernel + t]
    }
}

/// Per-channel, per-row gate values in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    channels: usize,
    height: usize,
    data: Vec<f64>,
}

impl AttentionMap {
    pub fn new(channels: usize, height: usize, data: Vec<f64>) -> Result<Self, AttentionError> {
        if data.len() != channels * height {
            return Err(AttentionError::DimensionMismatch("attention map size".into()));
        }
        Ok(Self { channels, height, data })
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn get(&self, c: usize, h: usize) -> f64 {
        self.data[c * self.height + h]
    }
}

/// Everything `ha_backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct HaCache {
    params: HaParams,
    lower_shape: (usize, usize, usize),
    pooled: Vec<f64>,
    attention: AttentionMap,
    higher: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct HaOutput {
    pub refined: FeatureMap,
    pub attention: AttentionMap,
    pub cache: HaCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaGradients {
    pub lower: FeatureMap,
    pub higher: FeatureMap,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `(low row, high row, weight of high row)` for each output row of a
/// half-pixel-centered linear resize from `h_in` to `h_out` rows.
fn interpolation_taps(h_in: usize, h_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = h_in as f64 / h_out as f64;
    (0..h_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (h_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(h_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn ha_forward(lower: &FeatureMap, higher: &FeatureMap, params: &HaParams) -> Result<HaOutput, AttentionError> {
    if lower.channels != params.in_channels {
        return Err(AttentionError::DimensionMismatch(format!(
            "lower map has {} channels, convolution expects {}",
            lower.channels, params.in_channels
        )));
    }
    if higher.channels != params.out_channels {
        return Err(AttentionError::DimensionMismatch(format!(
            "higher map has {} channels, convolution produces {}",
            higher.channels, params.out_channels
        )));
    }
    let (cl, hl, wl) = lower.shape();
    let (ch, hh, wh) = higher.shape();
    let half = params.kernel / 2;

    let mut pooled = vec![0.0; cl * hl];
    for c in 0..cl {
        for h in 0..hl {
            let s: f64 = (0..wl).map(|w| lower.get(c, h, w)).sum();
            pooled[c * hl + h] = s / wl as f64;
        }
    }

    let mut conv = vec![0.0; ch * hl];
    for o in 0..ch {
        for h in 0..hl {
            let mut acc = params.bias[o];
            for c in 0..cl {
                for t in 0..params.kernel {
                    let src = h as isize + t as isize - half as isize;
                    if src >= 0 && (src as usize) < hl {
                        acc += params.w(o, c, t) * pooled[c * hl + src as usize];
                    }
                }
            }
            conv[o * hl + h] = acc;
        }
    }

    let taps = interpolation_taps(hl, hh);
    let mut attention = vec![0.0; ch * hh];
    for o in 0..ch {
        for (i, &(i0, i1, t)) in taps.iter().enumerate() {
            let z = (1.0 - t) * conv[o * hl + i0] + t * conv[o * hl + i1];
            attention[o * hh + i] = sigmoid(z);
        }
    }
    let attention = AttentionMap { channels: ch, height: hh, data: attention };

    let mut refined = FeatureMap::zeros(ch, hh, wh);
    for c in 0..ch {
        for h in 0..hh {
            let a = attention.get(c, h);
            for w in 0..wh {
                refined.set(c, h, w, a * higher.get(c, h, w));
            }
        }
    }

    let cache = HaCache {
        params: params.clone(),
        lower_shape: lower.shape(),
        pooled,
        attention: attention.clone(),
        higher: higher.clone(),
    };
    Ok(HaOutput { refined, attention, cache })
}

/// Reverse-mode gradients of the forward composition.
pub fn ha_backward(cache: &HaCache, grad_refined: &FeatureMap) -> Result<HaGradients, AttentionError> {
    let expected = cache.higher.shape();
    if grad_refined.shape() != expected {
        return Err(AttentionError::StaleCache { expected, got: grad_refined.shape() });
    }
    let params = &cache.params;
    let (cl, hl, wl) = cache.lower_shape;
    let (ch, hh, wh) = expected;
    let half = params.kernel / 2;

    let mut grad_higher = FeatureMap::zeros(ch, hh, wh);
    // gradient w.r.t. the pre-sigmoid interpolated logits
    let mut grad_z = vec![0.0; ch * hh];
    for c in 0..ch {
        for h in 0..hh {
            let a = cache.attention.get(c, h);
            let mut ga = 0.0;
            for w in 0..wh {
                let g = grad_refined.get(c, h, w);
                grad_higher.set(c, h, w, a * g);
                ga += g * cache.higher.get(c, h, w);
            }
            grad_z[c * hh + h] = ga * a * (1.0 - a);
        }
    }

    let taps = interpolation_taps(hl, hh);
    let mut grad_conv = vec![0.0; ch * hl];
    for o in 0..ch {
        for (i, &(i0, i1, t)) in taps.iter().enumerate() {
            let g = grad_z[o * hh + i];
            grad_conv[o * hl + i0] += (1.0 - t) * g;
            grad_conv[o * hl + i1] += t * g;
        }
    }

    let mut grad_bias = vec![0.0; ch];
    let mut grad_weight = vec![0.0; params.weight.len()];
    let mut grad_pooled = vec![0.0; cl * hl];
    for o in 0..ch {
        for h in 0..hl {
            let g = grad_conv[o * hl + h];
            grad_bias[o] += g;
            for c in 0..cl {
                for t in 0..params.kernel {
                    let src = h as isize + t as isize - half as isize;
                    if src >= 0 && (src as usize) < hl {
                        let src = src as usize;
                        grad_weight[(o * cl + c) * params.kernel + t] += g * cache.pooled[c * hl + src];
                        grad_pooled[c * hl + src] += g * params.w(o, c, t);
                    }
                }
            }
        }
    }

    let mut grad_lower = FeatureMap::zeros(cl, hl, wl);
    for c in 0..cl {
        for h in 0..hl {
            let g = grad_pooled[c * hl + h] / wl as f64;
            for w in 0..wl {
                grad_lower.set(c, h, w, g);
            }
        }
    }
    Ok(HaGradients { lower: grad_lower, higher: grad_higher, weight: grad_weight, bias: grad_bias })
}

fn check_target(logits: &FeatureMap, target: &LabelMask) -> Result<(), AttentionError> {
    if logits.height != target.height() || logits.width != target.width() {
        return Err(AttentionError::DimensionMismatch(format!(
            "logits are {}x{}, target is {}x{}",
            logits.width,
            logits.height,
            target.width(),
            target.height()
        )));
    }
    if let Some((x, y, label)) = target.iter().find(|&(_, _, l)| l as usize >= logits.channels) {
        return Err(AttentionError::LabelOutOfRange { label, x, y, channels: logits.channels });
    }
    Ok(())
}

/// Per-pixel softmax over channels.
pub fn softmax(logits: &FeatureMap) -> FeatureMap {
    let (c, h, w) = logits.shape();
    let mut out = FeatureMap::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let m = (0..c).map(|k| logits.get(k, y, x)).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..c).map(|k| (logits.get(k, y, x) - m).exp()).sum();
            for k in 0..c {
                out.set(k, y, x, (logits.get(k, y, x) - m).exp() / s);
            }
        }
    }
    out
}

/// Mean negative log-likelihood over pixels and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy(logits: &FeatureMap, target: &LabelMask) -> Result<(f64, FeatureMap), AttentionError> {
    check_target(logits, target)?;
    let (c, h, w) = logits.shape();
    let n = (h * w) as f64;
    let mut grad = FeatureMap::zeros(c, h, w);
    let mut loss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let label = target.get(x, y) as usize;
            let (arg, m) = (0..c)
                .map(|k| (k, logits.get(k, y, x)))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            // sum of exp(z - max) over all classes except the arg-max one
            let rest: f64 = (0..c).filter(|&k| k != arg).map(|k| (logits.get(k, y, x) - m).exp()).sum();
            let log_sum = m + rest.ln_1p();
            loss += log_sum - logits.get(label, y, x);
            for k in 0..c {
                let p = (logits.get(k, y, x) - log_sum).exp();
                let g = if k == label { p - 1.0 } else { p };
                grad.set(k, y, x, g / n);
            }
        }
    }
    Ok((loss / n, grad))
}

/// Facade-branch loss plus floor-branch loss, unweighted.
pub fn fused_loss(
    fa_logits: &FeatureMap,
    fa_target: &LabelMask,
    fl_logits: &FeatureMap,
    fl_target: &LabelMask,
) -> Result<f64, AttentionError> {
    let (fa, _) = softmax_cross_entropy(fa_logits, fa_target)?;
    let (fl, _) = softmax_cross_entropy(fl_logits, fl_target)?;
    Ok(fa + fl)
}

pub enum HeatmapSource<'a> {
    /// Floor-palette mask; rows are orders `1..=10`.
    Mask(&'a LabelMask),
    /// Attention map; rows are its channels.
    Attention(&'a AttentionMap),
}

/// `cells[m][n]`: row `m` (order or channel), vertical bound `n` (0 = bottom),
/// normalized by the largest cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub n_bounds: usize,
    pub cells: Vec<Vec<f64>>,
}

pub fn height_heatmap(source: HeatmapSource<'_>, n_bounds: usize) -> Heatmap {
    let n_bounds = n_bounds.max(1);
    let mut cells = match source {
        HeatmapSource::Mask(mask) => {
            let mut cells = vec![vec![0.0; n_bounds]; MAX_FLOOR_ORDER as usize];
            for (_, y, l) in mask.iter() {
                if (1..=MAX_FLOOR_ORDER).contains(&l) {
                    cells[l as usize - 1][bound_of_row(y, mask.height(), n_bounds)] += 1.0;
                }
            }
            cells
        }
        HeatmapSource::Attention(att) => {
            let mut cells = vec![vec![0.0; n_bounds]; att.channels()];
            let mut rows_in_bound = vec![0usize; n_bounds];
            for h in 0..att.height() {
                rows_in_bound[bound_of_row(h, att.height(), n_bounds)] += 1;
            }
            for (c, row) in cells.iter_mut().enumerate() {
                for h in 0..att.height() {
                    row[bound_of_row(h, att.height(), n_bounds)] += att.get(c, h);
                }
                for (cell, &n) in row.iter_mut().zip(&rows_in_bound) {
                    if n > 0 {
                        *cell /= n as f64;
                    }
                }
            }
            cells
        }
    };
    let max = cells.iter().flatten().fold(0.0_f64, |m, &v| m.max(v));
    if max > 0.0 {
        cells.iter_mut().flatten().for_each(|v| *v /= max);
    }
    Heatmap { n_bounds, cells }
}

/// Central-difference gradient verification of the attention layer and the
/// cross-entropy loss on seeded random instances.
pub mod gradcheck {
    use super::*;

    pub const STEP: f64 = 1e-5;
    pub const TOLERANCE: f64 = 1e-5;
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is numerically zero are compared absolutely.
    pub const REL_FLOOR: f64 = 1e-6;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
    }

    #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
    pub struct GradCheckReport {
        pub seed: u64,
        pub checked: usize,
        pub max_rel_error_attention: f64,
        pub max_rel_error_cross_entropy: f64,
    }

    impl GradCheckReport {
        pub fn max_rel_error(&self) -> f64 {
            self.max_rel_error_attention.max(self.max_rel_error_cross_entropy)
        }

        pub fn passed(&self) -> bool {
            self.max_rel_error() < TOLERANCE
        }
    }

    /// Layer shapes used by [`check_instance`].
    #[derive(Debug, Clone, Copy)]
    pub struct Shape {
        pub lower_channels: usize,
        pub higher_channels: usize,
        pub lower_height: usize,
        pub higher_height: usize,
        pub lower_width: usize,
        pub higher_width: usize,
        pub kernel: usize,
    }

    impl Shape {
        pub fn for_seed(seed: u64) -> Self {
            Shape {
                lower_channels: 2,
                higher_channels: 3,
                lower_height: 5,
                // alternate between identity and genuine resampling
                higher_height: [5, 7, 9, 4][(seed % 4) as usize],
                lower_width: 4,
                higher_width: 3,
                kernel: 3,
            }
        }
    }

    fn projected_loss(lower: &FeatureMap, higher: &FeatureMap, params: &HaParams, proj: &FeatureMap) -> f64 {
        let out = ha_forward(lower, higher, params).expect("shapes validated");
        out.refined.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
    }

    pub fn check_instance(seed: u64, shape: Shape) -> Result<GradCheckReport, AttentionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lower = FeatureMap::random(shape.lower_channels, shape.lower_height, shape.lower_width, &mut rng);
        let higher = FeatureMap::random(shape.higher_channels, shape.higher_height, shape.higher_width, &mut rng);
        let params = HaParams::random(shape.lower_channels, shape.higher_channels, shape.kernel, &mut rng)?;
        let proj = FeatureMap::random(shape.higher_channels, shape.higher_height, shape.higher_width, &mut rng);

        let out = ha_forward(&lower, &higher, &params)?;
        let grads = ha_backward(&out.cache, &proj)?;
        let mut worst: f64 = 0.0;
        let mut checked = 0;

        for i in 0..lower.data().len() {
            let num = central(
                |v| {
                    let mut l = lower.clone();
                    l.data_mut()[i] = v;
                    projected_loss(&l, &higher, &params, &proj)
                },
                lower.data()[i],
            );
            worst = worst.max(relative_error(grads.lower.data()[i], num));
            checked += 1;
        }
        for i in 0..higher.data().len() {
            let num = central(
                |v| {
                    let mut h = higher.clone();
                    h.data_mut()[i] = v;
                    projected_loss(&lower, &h, &params, &proj)
                },
                higher.data()[i],
            );
            worst = worst.max(relative_error(grads.higher.data()[i], num));
            checked += 1;
        }
        for i in 0..params.weight().len() {
            let num = central(
                |v| {
                    let mut p = params.clone();
                    p.weight_mut()[i] = v;
                    projected_loss(&lower, &higher, &p, &proj)
                },
                params.weight()[i],
            );
            worst = worst.max(relative_error(grads.weight[i], num));
            checked += 1;
        }
        for i in 0..params.bias().len() {
            let num = central(
                |v| {
                    let mut p = params.clone();
                    p.bias_mut()[i] = v;
                    projected_loss(&lower, &higher, &p, &proj)
                },
                params.bias()[i],
            );
            worst = worst.max(relative_error(grads.bias[i], num));
            checked += 1;
        }

        let classes = 3;
        let logits = FeatureMap::random(classes, 2, 2, &mut rng);
        let labels = (0..4).map(|_| rng.gen_range(0..classes as u8)).collect();
        let target = LabelMask::new(2, 2, labels).expect("2x2 mask");
        let (_, grad) = softmax_cross_entropy(&logits, &target)?;
        let mut worst_ce: f64 = 0.0;
        for i in 0..logits.data().len() {
            let num = central(
                |v| {
                    let mut z = logits.clone();
                    z.data_mut()[i] = v;
                    softmax_cross_entropy(&z, &target).expect("validated").0
                },
                logits.data()[i],
            );
            worst_ce = worst_ce.max(relative_error(grad.data()[i], num));
            checked += 1;
        }

        Ok(GradCheckReport { seed, checked, max_rel_error_attention: worst, max_rel_error_cross_entropy: worst_ce })
    }

    /// Runs `instances` consecutive seeds starting at `seed`.
    pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckReport>, AttentionError> {
        (0..instances as u64)
            .map(|i| {
                let s = seed.wrapping_add(i);
                check_instance(s, Shape::for_seed(s))
            })
            .collect()
    }
}

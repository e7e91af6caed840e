//! Synthetic sample generation: rectified facade masks are warped onto
//! annotated street-view quads and composited onto a canvas.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    apply_homography, homography_from_quads, invert_homography, GeometryError, Homography, LabelMask, Line5Tuple,
    Orientation, Point2, Quad,
};
use crate::palette::{self, Palette, PaletteError, FACADE_DOOR, FACADE_SHOP, FACADE_WINDOW, OTHER};

/// Default band thickness (pixels) when rasterizing floor-level lines.
pub const DEFAULT_BAND_PX: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("labels {0:?} have no entry in the mapping table")]
    UnmappedLabel(Vec<u8>),
    #[error("mapping target {0} is not one of other/window/door/shop")]
    InvalidMappingTarget(u8),
    #[error("semantic and floor masks differ in size ({0}x{1} vs {2}x{3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error("floor orders {0:?} do not form a contiguous prefix 1..k")]
    NonContiguousOrders(Vec<u8>),
    #[error("floor order {0} does not sit above order {1}")]
    OrdersNotStacked(u8, u8),
    #[error("quad {0} lies outside the {1}x{2} canvas")]
    QuadOutsideCanvas(usize, usize, usize),
    #[error("band thickness must be at least 1 pixel")]
    ZeroBand,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Raw-label to simplified-label table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    table: BTreeMap<u8, u8>,
}

impl LabelMapping {
    pub fn new(pairs: impl IntoIterator<Item = (u8, u8)>) -> Result<Self, AugmentError> {
        let table: BTreeMap<u8, u8> = pairs.into_iter().collect();
        if let Some(&bad) = table.values().find(|&&t| !Palette::SimplifiedFacade.contains(t)) {
            return Err(AugmentError::InvalidMappingTarget(bad));
        }
        Ok(Self { table })
    }

    /// Identity over the simplified codes `0..=3`.
    pub fn identity() -> Self {
        Self { table: (0..=FACADE_SHOP).map(|c| (c, c)).collect() }
    }

    /// Toy default for CMP-style sources, using the CMP base label codes:
    /// 1 background, 2 facade, 3 window, 4 door, 5 cornice, 6 sill,
    /// 7 balcony, 8 blind, 9 pillar, 10 deco, 11 molding, 12 shop
    /// (0 = unlabeled). Window, door and shop survive; everything else
    /// becomes `other`.
    pub fn cmp_default() -> Self {
        let mut table: BTreeMap<u8, u8> = (0..=12).map(|c| (c, OTHER)).collect();
        table.insert(3, FACADE_WINDOW);
        table.insert(4, FACADE_DOOR);
        table.insert(12, FACADE_SHOP);
        Self { table }
    }

    pub fn get(&self, raw: u8) -> Option<u8> {
        self.table.get(&raw).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.table.iter().map(|(&k, &v)| (k, v))
    }
}

/// Pointwise relabeling of a raw facade mask into the simplified palette.
pub fn simplify_semantics(raw: &LabelMask, mapping: &LabelMapping) -> Result<LabelMask, AugmentError> {
    let missing: Vec<u8> = raw.label_set().into_iter().filter(|&l| mapping.get(l).is_none()).collect();
    if !missing.is_empty() {
        return Err(AugmentError::UnmappedLabel(missing));
    }
    Ok(raw.map_labels(|l| mapping.get(l).unwrap_or(OTHER)))
}

/// A front-facing facade with its simplified semantics and floor-level
/// masks. Higher floor orders sit higher (smaller mean row).
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedFacade {
    semantic: LabelMask,
    floor: LabelMask,
}

impl RectifiedFacade {
    pub fn new(semantic: LabelMask, floor: LabelMask) -> Result<Self, AugmentError> {
        if !semantic.same_dims(&floor) {
            return Err(AugmentError::DimensionMismatch(
                semantic.width(),
                semantic.height(),
                floor.width(),
                floor.height(),
            ));
        }
        palette::validate(&semantic, Palette::SimplifiedFacade)?;
        palette::validate(&floor, Palette::Floor)?;

        let mut row_sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
        for (_, y, l) in floor.iter().filter(|&(_, _, l)| l != OTHER) {
            let e = row_sums.entry(l).or_default();
            e.0 += y as f64;
            e.1 += 1;
        }
        let orders: Vec<u8> = row_sums.keys().copied().collect();
        if orders.is_empty() || orders.iter().enumerate().any(|(i, &o)| o as usize != i + 1) {
            return Err(AugmentError::NonContiguousOrders(orders));
        }
        let means: Vec<(u8, f64)> = row_sums.into_iter().map(|(o, (s, n))| (o, s / n as f64)).collect();
        for pair in means.windows(2) {
            if pair[1].1 >= pair[0].1 {
                return Err(AugmentError::OrdersNotStacked(pair[1].0, pair[0].0));
            }
        }
        Ok(Self { semantic, floor })
    }

    pub fn semantic(&self) -> &LabelMask {
        &self.semantic
    }

    pub fn floor(&self) -> &LabelMask {
        &self.floor
    }

    pub fn width(&self) -> usize {
        self.semantic.width()
    }

    pub fn height(&self) -> usize {
        self.semantic.height()
    }

    pub fn max_order(&self) -> u8 {
        self.floor.labels().iter().copied().max().unwrap_or(0)
    }

    /// The full pixel-center extent `[0, w-1] x [0, h-1]` as a quad.
    pub fn extent(&self) -> Result<Quad, GeometryError> {
        Quad::rect(0.0, 0.0, self.width() as f64 - 1.0, self.height() as f64 - 1.0, Orientation::Front)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub facade_id: usize,
    #[serde(serialize_with = "serialize_quad")]
    pub quad: Quad,
    pub homography: Homography,
}

fn serialize_quad<S: serde::Serializer>(q: &Quad, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let corners: Vec<[f64; 2]> = q.corners().iter().map(|c| [c.x, c.y]).collect();
    let mut st = s.serialize_struct("Quad", 2)?;
    st.serialize_field("corners", &corners)?;
    st.serialize_field("orientation", &q.orientation())?;
    st.end()
}

/// Canvas-sized semantic and floor masks plus the warp used for each facade.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub semantic_mask: LabelMask,
    pub floor_mask: LabelMask,
    pub provenance: Vec<Provenance>,
    pub seed: u64,
}

/// Warps each facade onto its quad and paints it onto a blank canvas in
/// list order, so later facades cover earlier ones. Inside a quad every
/// warped pixel that is not a window, door or shop is stamped with the
/// quad's orientation code.
///
/// The output depends only on the inputs; `seed` is carried into the sample
/// so that a manifest can record how the facade/quad pairing was drawn
/// (see [`pair_facades`]).
pub fn generate_sample(
    facades: &[(RectifiedFacade, Quad)],
    canvas_w: usize,
    canvas_h: usize,
    seed: u64,
) -> Result<AugmentedSample, AugmentError> {
    let mut semantic = LabelMask::filled(canvas_w, canvas_h, OTHER)?;
    let mut floor = LabelMask::filled(canvas_w, canvas_h, OTHER)?;
    let mut provenance = Vec::with_capacity(facades.len());

    for (id, (facade, quad)) in facades.iter().enumerate() {
        let inside = quad
            .corners()
            .iter()
            .all(|c| c.x >= 0.0 && c.y >= 0.0 && c.x <= canvas_w as f64 && c.y <= canvas_h as f64);
        if !inside {
            return Err(AugmentError::QuadOutsideCanvas(id, canvas_w, canvas_h));
        }
        let h = homography_from_quads(&facade.extent()?, quad)?;
        let inv = invert_homography(&h)?;
        let (max_x, max_y) = ((facade.width() - 1) as f64, (facade.height() - 1) as f64);

        for (x, y) in quad.pixels(canvas_w, canvas_h) {
            let Ok(p) = apply_homography(&inv, Point2::new(x as f64, y as f64)) else {
                continue;
            };
            let (sx, sy) = (p.x.round(), p.y.round());
            if !(sx >= -0.5 && sy >= -0.5 && sx <= max_x + 0.5 && sy <= max_y + 0.5) {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, max_x) as usize, sy.clamp(0.0, max_y) as usize);
            let sem = facade.semantic().get(sx, sy);
            let sem = if matches!(sem, FACADE_WINDOW | FACADE_DOOR | FACADE_SHOP) { sem } else { quad.orientation().code() };
            semantic.set(x, y, sem);
            floor.set(x, y, facade.floor().get(sx, sy));
        }
        provenance.push(Provenance { facade_id: id, quad: *quad, homography: h });
    }
    Ok(AugmentedSample { semantic_mask: semantic, floor_mask: floor, provenance, seed })
}

/// Draws, for each of `n_quads` quads, the index of the facade to warp onto
/// it. Deterministic in `seed`.
pub fn pair_facades(n_facades: usize, n_quads: usize, seed: u64) -> Vec<usize> {
    if n_facades == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_quads).map(|_| rng.gen_range(0..n_facades)).collect()
}

/// Paints each line as a vertical band: pixel `(x, y)` with
/// `ceil(xs) <= x <= floor(xe)` receives the line's order when
/// `|y - y(x)| <= band_px / 2`. Later lines overwrite earlier ones.
pub fn rasterize_floor_lines(
    lines: &[Line5Tuple],
    band_px: usize,
    width: usize,
    height: usize,
) -> Result<LabelMask, AugmentError> {
    let mut mask = LabelMask::filled(width, height, OTHER)?;
    paint_floor_lines(&mut mask, lines, band_px)?;
    Ok(mask)
}

/// In-place variant of [`rasterize_floor_lines`].
pub fn paint_floor_lines(mask: &mut LabelMask, lines: &[Line5Tuple], band_px: usize) -> Result<(), AugmentError> {
    if band_px == 0 {
        return Err(AugmentError::ZeroBand);
    }
    let half = band_px as f64 / 2.0;
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    for line in lines {
        let x0 = line.xs().ceil().max(0.0);
        let x1 = line.xe().floor().min(w - 1.0);
        if x1 < x0 {
            continue;
        }
        for x in x0 as usize..=x1 as usize {
            let yc = line.y_at(x as f64);
            let y0 = (yc - half).ceil().max(0.0);
            let y1 = (yc + half).floor().min(h - 1.0);
            if y1 < y0 {
                continue;
            }
            for y in y0 as usize..=y1 as usize {
                mask.set(x, y, line.order());
            }
        }
    }
    Ok(())
}

/// Fills the pixels of `quad` with `label`.
pub fn paint_quad(mask: &mut LabelMask, quad: &Quad, label: u8) {
    for (x, y) in quad.pixels(mask.width(), mask.height()) {
        mask.set(x, y, label);
    }
}

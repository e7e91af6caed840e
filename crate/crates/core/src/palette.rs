//! Fixed label codes for the two mask roles.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::{LabelMask, MAX_FLOOR_ORDER};

pub const OTHER: u8 = 0;
pub const FACADE_WINDOW: u8 = 1;
pub const FACADE_DOOR: u8 = 2;
pub const FACADE_SHOP: u8 = 3;
pub const FACADE_LEFT: u8 = 4;
pub const FACADE_RIGHT: u8 = 5;
pub const FACADE_FRONT: u8 = 6;

/// Facade-palette class names, indexed by code.
pub const FACADE_CLASS_NAMES: [&str; 7] = ["other", "window", "door", "shop", "left", "right", "front"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// `{other, window, door, shop, left, right, front}` as codes `0..=6`.
    Facade,
    /// Facade palette without the orientation codes, as found in rectified
    /// facade sources before augmentation.
    SimplifiedFacade,
    /// `other = 0`, floor order `k` as code `k` for `k = 1..=10`.
    Floor,
}

impl Palette {
    pub fn max_code(self) -> u8 {
        match self {
            Palette::Facade => FACADE_FRONT,
            Palette::SimplifiedFacade => FACADE_SHOP,
            Palette::Floor => MAX_FLOOR_ORDER,
        }
    }

    pub fn contains(self, code: u8) -> bool {
        code <= self.max_code()
    }

    pub fn name(self) -> &'static str {
        match self {
            Palette::Facade => "facade",
            Palette::SimplifiedFacade => "simplified facade",
            Palette::Floor => "floor",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("labels {codes:?} are not in the {palette} palette")]
pub struct PaletteError {
    pub palette: &'static str,
    pub codes: Vec<u8>,
}

/// Checks every label of `mask` against `palette`.
pub fn validate(mask: &LabelMask, palette: Palette) -> Result<(), PaletteError> {
    let bad: BTreeSet<u8> = mask.labels().iter().copied().filter(|&c| !palette.contains(c)).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(PaletteError { palette: palette.name(), codes: bad.into_iter().collect() })
    }
}

pub fn is_floor_order(code: u8) -> bool {
    (1..=MAX_FLOOR_ORDER).contains(&code)
}

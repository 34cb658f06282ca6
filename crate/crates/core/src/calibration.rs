//! Reflectance calibration against white and dark Spectralon references.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::HyperCube;

/// Minimum |white − dark| (raw intensity units) for a valid denominator.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// Raw white and dark reference measurements.
///
/// Either full-frame (same H×W×K as the scene) or 1×1×K per-band values
/// broadcast over every pixel.
#[derive(Debug, Clone)]
pub struct ReferencePair {
    white: HyperCube,
    dark: HyperCube,
}

impl ReferencePair {
    pub fn new(white: HyperCube, dark: HyperCube) -> Result<Self> {
        if white.height() != dark.height()
            || white.width() != dark.width()
            || white.bands() != dark.bands()
        {
            return Err(Error::Shape(format!(
                "white reference is {}x{}x{} but dark is {}x{}x{}",
                white.height(),
                white.width(),
                white.bands(),
                dark.height(),
                dark.width(),
                dark.bands()
            )));
        }
        Ok(ReferencePair { white, dark })
    }

    pub fn white(&self) -> &HyperCube {
        &self.white
    }

    pub fn dark(&self) -> &HyperCube {
        &self.dark
    }

    fn is_per_band(&self) -> bool {
        self.white.height() == 1 && self.white.width() == 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub invalid_pixel_count: u64,
    pub clipped_low: u64,
    pub clipped_high: u64,
}

/// Scalar reflectance `(L − dark) / (white − dark)`; `None` when the
/// denominator is degenerate.
#[inline]
pub fn reflectance(intensity: f64, white: f64, dark: f64) -> Option<f64> {
    let denom = white - dark;
    if denom.abs() < DENOMINATOR_EPS {
        None
    } else {
        Some((intensity - dark) / denom)
    }
}

/// Converts a raw intensity cube to reflectance.
///
/// Degenerate denominators yield 0 and are counted as invalid. With `clip`
/// the result is clamped to `[0, 1]` and clamped elements are counted.
pub fn calibrate(
    raw: &HyperCube,
    refs: &ReferencePair,
    clip: bool,
) -> Result<(HyperCube, CalibrationReport)> {
    if raw.is_calibrated() {
        return Err(Error::Contract(
            "input cube is already calibrated".into(),
        ));
    }
    let bands = raw.bands();
    if refs.white.bands() != bands {
        return Err(Error::Shape(format!(
            "references have {} bands, scene has {bands}",
            refs.white.bands()
        )));
    }
    let per_band = refs.is_per_band();
    if !per_band && (refs.white.height() != raw.height() || refs.white.width() != raw.width()) {
        return Err(Error::Shape(format!(
            "references are {}x{}, scene is {}x{} (use full-frame or 1x1 references)",
            refs.white.height(),
            refs.white.width(),
            raw.height(),
            raw.width()
        )));
    }

    let mut report = CalibrationReport::default();
    let white = refs.white.values();
    let dark = refs.dark.values();
    let values = raw
        .values()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let r = if per_band { i % bands } else { i };
            let value = match reflectance(l as f64, white[r] as f64, dark[r] as f64) {
                None => {
                    report.invalid_pixel_count += 1;
                    0.0
                }
                Some(v) if clip && v < 0.0 => {
                    report.clipped_low += 1;
                    0.0
                }
                Some(v) if clip && v > 1.0 => {
                    report.clipped_high += 1;
                    1.0
                }
                Some(v) => v,
            };
            value as f32
        })
        .collect();
    let out = HyperCube::new(raw.height(), raw.width(), values, raw.grid().clone(), true)?;
    Ok((out, report))
}

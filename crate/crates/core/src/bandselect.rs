//! Band subsets for the all / uniformly-spaced / RGB-nearest configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hypercube::WavelengthGrid;

/// Conventional blue, green and red channel centers (nm).
pub const DEFAULT_RGB_NM: [f64; 3] = [465.0, 550.0, 630.0];

#[derive(Debug, Clone, Default, PartialEq)]
pub enum BandStrategy {
    #[default]
    All,
    /// `k` bands spread uniformly over the grid, endpoints included.
    UniformK(usize),
    /// For each target wavelength, the nearest band.
    RgbNearest([f64; 3]),
}

impl BandStrategy {
    pub fn rgb() -> Self {
        BandStrategy::RgbNearest(DEFAULT_RGB_NM)
    }

    /// Number of bands this strategy yields on a grid with `grid_len` bands.
    pub fn band_count(&self, grid_len: usize) -> usize {
        match self {
            BandStrategy::All => grid_len,
            BandStrategy::UniformK(k) => *k,
            BandStrategy::RgbNearest(_) => 3,
        }
    }
}

impl fmt::Display for BandStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandStrategy::All => write!(f, "all"),
            BandStrategy::UniformK(k) => write!(f, "uniform:{k}"),
            BandStrategy::RgbNearest([r, g, b]) => write!(f, "rgb:{r},{g},{b}"),
        }
    }
}

impl Serialize for BandStrategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BandStrategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for BandStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid band strategy {s:?} (expected all, uniform:K or rgb:l1,l2,l3)"));
        match s.split_once(':') {
            None if s == "all" => Ok(BandStrategy::All),
            None if s == "rgb" => Ok(BandStrategy::rgb()),
            Some(("uniform", k)) => k.trim().parse().map(BandStrategy::UniformK).map_err(|_| bad()),
            Some(("rgb", list)) => {
                let targets = list
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                let targets: [f64; 3] = targets.try_into().map_err(|_| bad())?;
                Ok(BandStrategy::RgbNearest(targets))
            }
            _ => Err(bad()),
        }
    }
}

/// Index nearest to `target_nm`; ties go to the lower index.
fn nearest_band(grid: &WavelengthGrid, target_nm: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, w) in grid.wavelengths().into_iter().enumerate() {
        let d = (w - target_nm).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Band indices (strictly increasing) for `strategy` on `grid`.
pub fn select_bands(grid: &WavelengthGrid, strategy: &BandStrategy) -> Result<Vec<usize>> {
    let count = grid.len();
    let indices = match strategy {
        BandStrategy::All => (0..count).collect::<Vec<_>>(),
        BandStrategy::UniformK(k) => {
            let k = *k;
            if k < 2 {
                return Err(Error::Validation(format!("uniform band count must be at least 2, got {k}")));
            }
            if k > count {
                return Err(Error::Validation(format!(
                    "cannot pick {k} uniform bands from a {count}-band grid"
                )));
            }
            // round(j * (count-1) / (k-1)), half away from zero, in exact integers
            let span = count - 1;
            let denom = k - 1;
            (0..k).map(|j| (2 * j * span + denom) / (2 * denom)).collect()
        }
        BandStrategy::RgbNearest(targets) => {
            let (lo, hi) = (grid.start_nm(), grid.end_nm());
            if let Some(t) = targets.iter().find(|&&t| !(lo..=hi).contains(&t)) {
                return Err(Error::Validation(format!(
                    "target {t} nm lies outside the grid range [{lo}, {hi}]"
                )));
            }
            let mut picked: Vec<usize> = targets.iter().map(|&t| nearest_band(grid, t)).collect();
            picked.sort_unstable();
            picked
        }
    };
    if let Some(pair) = indices.windows(2).find(|p| p[0] == p[1]) {
        return Err(Error::Validation(format!(
            "band selection {strategy} maps two entries to band {} (pair {:?})",
            pair[0], pair
        )));
    }
    Ok(indices)
}

//! Seeded synthetic hyperspectral scenes.
//!
//! A scene is a Voronoi partition of random sites, each cell assigned to a
//! class. A pixel spectrum is its class signature (a baseline plus Gaussian
//! bumps over wavelength), scaled by `1 ± amplitude` where the class texture
//! is on/off, plus white Gaussian noise, clamped to `[0, 1]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{save_cube, save_mask, DatasetManifest, HyperCube, LabelMask, ManifestEntry, Split, WavelengthGrid};

/// Minimum share of the image each class must cover.
pub const MIN_CLASS_FRACTION: f64 = 0.02;
const MAX_LAYOUT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Flat,
    /// Squares of side `period / 2` alternating sign.
    Checker { period: usize },
    /// Bands of width `period / 2` alternating sign.
    Stripes { period: usize, orientation: Orientation },
}

impl Texture {
    /// `+1`, `-1` or `0` at pixel `(row, col)`.
    pub fn sign(&self, row: usize, col: usize) -> f64 {
        let phase = |v: usize, period: usize| (2 * v / period) % 2;
        match *self {
            Texture::Flat => 0.0,
            Texture::Checker { period } => {
                if (phase(row, period) + phase(col, period)) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Texture::Stripes { period, orientation } => {
                let v = match orientation {
                    Orientation::Horizontal => row,
                    Orientation::Vertical => col,
                };
                if phase(v, period) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn period(&self) -> Option<usize> {
        match *self {
            Texture::Flat => None,
            Texture::Checker { period } | Texture::Stripes { period, .. } => Some(period),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub baseline: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
    pub texture: Texture,
    /// Relative modulation applied where the texture is on/off.
    #[serde(default)]
    pub texture_amplitude: f64,
}

impl ClassSpec {
    /// Signature at `wavelength_nm`, clamped to `[0, 1]`.
    pub fn signature_at(&self, wavelength_nm: f64) -> f64 {
        let v = self.baseline
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude * (-(wavelength_nm - b.center_nm).powi(2) / (2.0 * b.width_nm * b.width_nm)).exp())
                .sum::<f64>();
        v.clamp(0.0, 1.0)
    }

    pub fn signature(&self, grid: &WavelengthGrid) -> Vec<f64> {
        grid.wavelengths().into_iter().map(|w| self.signature_at(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub start_nm: f64,
    pub end_nm: f64,
    pub classes: Vec<ClassSpec>,
    pub noise_sigma: f64,
    /// Number of Voronoi sites.
    pub sites: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Background, two texture twins and one spectrally distinct class on a
    /// 64×64×16 grid. The twins share a signature and modulation depth;
    /// one is a period-2 checkerboard, the other period-2 horizontal
    /// stripes, so a single pixel's spectrum has the same distribution in
    /// both and only the spatial arrangement tells them apart.
    pub fn texture_twins(seed: u64) -> Self {
        let twin = |name: &str, texture: Texture, texture_amplitude: f64| ClassSpec {
            name: name.into(),
            baseline: 0.45,
            bumps: vec![Bump {
                center_nm: 650.0,
                width_nm: 90.0,
                amplitude: 0.25,
            }],
            texture,
            texture_amplitude,
        };
        SynthConfig {
            height: 64,
            width: 64,
            bands: 16,
            start_nm: 400.0,
            end_nm: 1000.0,
            classes: vec![
                ClassSpec {
                    name: "background".into(),
                    baseline: 0.1,
                    bumps: vec![],
                    texture: Texture::Flat,
                    texture_amplitude: 0.0,
                },
                twin("twin_checker", Texture::Checker { period: 2 }, TWIN_AMPLITUDE),
                twin(
                    "twin_stripes",
                    Texture::Stripes {
                        period: 2,
                        orientation: Orientation::Horizontal,
                    },
                    TWIN_AMPLITUDE,
                ),
                ClassSpec {
                    name: "distinct".into(),
                    baseline: 0.35,
                    bumps: vec![Bump {
                        center_nm: 850.0,
                        width_nm: 60.0,
                        amplitude: 0.4,
                    }],
                    texture: Texture::Flat,
                    texture_amplitude: 0.0,
                },
            ],
            noise_sigma: TWIN_NOISE,
            sites: 12,
            seed,
        }
    }

    /// Classes separated only by narrow absorption-like bumps placed between
    /// the bands a 3-band uniform selection keeps.
    pub fn narrow_signatures(seed: u64) -> Self {
        let flat_class = |name: &str, bumps: Vec<Bump>| ClassSpec {
            name: name.into(),
            baseline: 0.5,
            bumps,
            texture: Texture::Flat,
            texture_amplitude: 0.0,
        };
        let bump = |center_nm: f64| Bump {
            center_nm,
            width_nm: 15.0,
            amplitude: 0.25,
        };
        SynthConfig {
            height: 32,
            width: 32,
            bands: 16,
            start_nm: 400.0,
            end_nm: 1000.0,
            classes: vec![
                flat_class("background", vec![]),
                flat_class("a", vec![bump(520.0)]),
                flat_class("b", vec![bump(640.0)]),
                flat_class("c", vec![bump(880.0)]),
            ],
            noise_sigma: 0.02,
            sites: 10,
            seed,
        }
    }

    pub fn grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::uniform(self.start_nm, self.end_nm, self.bands)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        self.grid()?;
        if self.classes.len() < 2 || self.classes.len() > 256 {
            return Err(Error::Config(format!("need between 2 and 256 classes, got {}", self.classes.len())));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.sites < self.classes.len() {
            return Err(Error::Config(format!(
                "{} sites cannot host {} classes",
                self.sites,
                self.classes.len()
            )));
        }
        for class in &self.classes {
            if let Some(p) = class.texture.period() {
                if p < 2 {
                    return Err(Error::Config(format!("{}: texture period must be at least 2", class.name)));
                }
            }
        }
        Ok(())
    }
}

/// Noise and modulation depth of the default texture-twin scene.
const TWIN_NOISE: f64 = 0.03;
const TWIN_AMPLITUDE: f64 = 0.06;

/// Label map from a seeded Voronoi partition; every class gets at least one
/// site.
fn voronoi_labels(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n_classes = config.classes.len();
    let sites: Vec<(f64, f64, u8)> = (0..config.sites)
        .map(|i| {
            let r = rng.random_range(0.0..config.height as f64);
            let c = rng.random_range(0.0..config.width as f64);
            let class = if i < n_classes { i } else { rng.random_range(0..n_classes) };
            (r, c, class as u8)
        })
        .collect();
    let mut labels = Vec::with_capacity(config.height * config.width);
    for row in 0..config.height {
        for col in 0..config.width {
            let (py, px) = (row as f64 + 0.5, col as f64 + 0.5);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &(sy, sx, _)) in sites.iter().enumerate() {
                let d = (py - sy).powi(2) + (px - sx).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels.push(sites[best].2);
        }
    }
    labels
}

/// Generates one scene. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<(HyperCube, LabelMask)> {
    config.validate()?;
    let grid = config.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.height * config.width;
    let min_pixels = (MIN_CLASS_FRACTION * n as f64).ceil() as usize;

    let mut labels = None;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let candidate = voronoi_labels(config, &mut rng);
        let mut counts = vec![0usize; config.classes.len()];
        for &l in &candidate {
            counts[l as usize] += 1;
        }
        if counts.iter().all(|&c| c >= min_pixels) {
            labels = Some(candidate);
            break;
        }
    }
    let labels = labels.ok_or_else(|| {
        Error::Config(format!(
            "could not give every class {:.0}% coverage after {MAX_LAYOUT_ATTEMPTS} layouts",
            MIN_CLASS_FRACTION * 100.0
        ))
    })?;

    let signatures: Vec<Vec<f64>> = config.classes.iter().map(|c| c.signature(&grid)).collect();
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(n * config.bands);
    for (p, &label) in labels.iter().enumerate() {
        let (row, col) = (p / config.width, p % config.width);
        let class = &config.classes[label as usize];
        let scale = 1.0 + class.texture_amplitude * class.texture.sign(row, col);
        for &s in &signatures[label as usize] {
            let eps = if config.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push((s * scale + eps).clamp(0.0, 1.0) as f32);
        }
    }
    let cube = HyperCube::new(config.height, config.width, values, grid, true)?;
    let mask = LabelMask::new(config.height, config.width, labels, config.class_names())?;
    Ok((cube, mask))
}

/// Writes `train_count + test_count` scenes (seeds derived from
/// `config.seed`) and a manifest into `dir`; returns the manifest path.
pub fn write_dataset(config: &SynthConfig, train_count: usize, test_count: usize, dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for i in 0..train_count + test_count {
        let scene = SynthConfig {
            seed: config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..config.clone()
        };
        let (cube, mask) = generate(&scene)?;
        let split = if i < train_count { Split::Train } else { Split::Test };
        let stem = format!("scene{i:03}");
        save_cube(&cube, &dir.join(format!("{stem}.hdr")))?;
        save_mask(&mask, &dir.join(format!("{stem}.png")))?;
        entries.push(ManifestEntry {
            cube: format!("{stem}.hdr").into(),
            mask: format!("{stem}.png").into(),
            split,
        });
    }
    let manifest = DatasetManifest {
        class_names: config.class_names(),
        grid: config.grid()?,
        entries,
    };
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}

//! Hyperspectral cubes, wavelength grids, label masks and dataset manifests.
//!
//! Cubes are stored as a plain-text `key=value` header next to a raw
//! little-endian `f32` payload in band-sequential order. The header names the
//! geometry, the wavelength list and whether the values are already
//! reflectance. Masks are 8-bit indexed PNGs whose palette index is the class.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class names of the WEEE metal-scrap dataset, background first.
pub const WEEE_CLASS_NAMES: [&str; 6] = [
    "background",
    "Copper",
    "Brass",
    "Aluminum",
    "StainlessSteel",
    "WhiteCopper",
];

/// Spectral range of the released WEEE cubes.
pub const WEEE_START_NM: f64 = 415.05;
pub const WEEE_END_NM: f64 = 1008.10;
pub const WEEE_BANDS: usize = 76;

pub fn weee_class_names() -> Vec<String> {
    WEEE_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Wavelength (nm) attached to each band of a cube.
///
/// Sensors deliver uniformly spaced bands; after band selection the grid is
/// kept as the explicit list of surviving wavelengths. Equality compares
/// the band centres, so both forms of the same grid are equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WavelengthGrid {
    Uniform {
        start_nm: f64,
        end_nm: f64,
        count: usize,
    },
    Explicit {
        wavelengths: Vec<f64>,
    },
}

impl PartialEq for WavelengthGrid {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.wavelengths() == other.wavelengths()
    }
}

impl WavelengthGrid {
    pub fn uniform(start_nm: f64, end_nm: f64, count: usize) -> Result<Self> {
        if !(start_nm.is_finite() && end_nm.is_finite()) || start_nm >= end_nm {
            return Err(Error::Validation(format!(
                "wavelength grid needs start < end, got [{start_nm}, {end_nm}]"
            )));
        }
        if count < 2 {
            return Err(Error::Validation(format!(
                "uniform wavelength grid needs at least 2 bands, got {count}"
            )));
        }
        Ok(WavelengthGrid::Uniform {
            start_nm,
            end_nm,
            count,
        })
    }

    /// The 76-band grid of the WEEE dataset.
    pub fn weee() -> Self {
        WavelengthGrid::Uniform {
            start_nm: WEEE_START_NM,
            end_nm: WEEE_END_NM,
            count: WEEE_BANDS,
        }
    }

    pub fn explicit(wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::Validation("empty wavelength list".into()));
        }
        if wavelengths.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("non-finite wavelength".into()));
        }
        if wavelengths.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Validation(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        Ok(WavelengthGrid::Explicit { wavelengths })
    }

    /// Builds a grid from a wavelength list, recognising the uniform form
    /// when the list reproduces it bit for bit.
    pub fn from_list(wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() >= 2 {
            let start = wavelengths[0];
            let end = wavelengths[wavelengths.len() - 1];
            if let Ok(uniform) = WavelengthGrid::uniform(start, end, wavelengths.len()) {
                if uniform.wavelengths() == wavelengths {
                    return Ok(uniform);
                }
            }
        }
        WavelengthGrid::explicit(wavelengths)
    }

    pub fn len(&self) -> usize {
        match self {
            WavelengthGrid::Uniform { count, .. } => *count,
            WavelengthGrid::Explicit { wavelengths } => wavelengths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wavelength(&self, index: usize) -> Result<f64> {
        let len = self.len();
        if index >= len {
            return Err(Error::OutOfRange { index, len });
        }
        Ok(match self {
            WavelengthGrid::Uniform {
                start_nm,
                end_nm,
                count,
            } => {
                if index == count - 1 {
                    *end_nm
                } else {
                    start_nm + index as f64 * (end_nm - start_nm) / (count - 1) as f64
                }
            }
            WavelengthGrid::Explicit { wavelengths } => wavelengths[index],
        })
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.wavelength(i).expect("index in range"))
            .collect()
    }

    pub fn start_nm(&self) -> f64 {
        self.wavelength(0).expect("grid is never empty")
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.len() - 1).expect("grid is never empty")
    }

    /// Grid restricted to `indices`; always explicit.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        let wavelengths = indices
            .iter()
            .map(|&i| self.wavelength(i))
            .collect::<Result<Vec<_>>>()?;
        WavelengthGrid::explicit(wavelengths)
    }
}

/// Wavelength in nanometers of band `index`.
pub fn wavelength_of(grid: &WavelengthGrid, index: usize) -> Result<f64> {
    grid.wavelength(index)
}

/// An H×W×K volume of spectral samples.
///
/// Values are held pixel-interleaved (`(row * width + col) * bands + band`)
/// so a pixel spectrum is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    grid: WavelengthGrid,
    calibrated: bool,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        grid: WavelengthGrid,
        calibrated: bool,
    ) -> Result<Self> {
        let bands = grid.len();
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if calibrated && values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "calibrated cube contains non-finite values".into(),
            ));
        }
        Ok(HyperCube {
            height,
            width,
            bands,
            values,
            grid,
            calibrated,
        })
    }

    /// Cube filled with a single value.
    pub fn filled(
        height: usize,
        width: usize,
        grid: WavelengthGrid,
        value: f32,
        calibrated: bool,
    ) -> Result<Self> {
        let n = height * width * grid.len();
        HyperCube::new(height, width, vec![value; n], grid, calibrated)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[(row * self.width + col) * self.bands + band]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    /// One band as a row-major H×W plane.
    pub fn band_plane(&self, band: usize) -> Vec<f32> {
        self.values
            .iter()
            .skip(band)
            .step_by(self.bands)
            .copied()
            .collect()
    }

    /// Channel-first copy (`[bands, height, width]`) widened to `f64`, the
    /// layout the segmentation models consume.
    pub fn to_channel_first(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.bands * plane];
        for (p, spectrum) in self.values.chunks_exact(self.bands).enumerate() {
            for (k, &v) in spectrum.iter().enumerate() {
                out[k * plane + p] = v as f64;
            }
        }
        out
    }
}

/// Keeps only the bands listed in `indices`, in order.
pub fn select_channels(cube: &HyperCube, indices: &[usize]) -> Result<HyperCube> {
    if indices.is_empty() {
        return Err(Error::Validation("no channels selected".into()));
    }
    for &i in indices {
        if i >= cube.bands {
            return Err(Error::OutOfRange {
                index: i,
                len: cube.bands,
            });
        }
    }
    if let Some(pair) = indices.windows(2).find(|p| p[0] >= p[1]) {
        return Err(Error::Validation(format!(
            "channel indices must be strictly increasing, found {} then {}",
            pair[0], pair[1]
        )));
    }
    let grid = if indices.len() == cube.bands {
        // strictly increasing and in range means this is the identity
        cube.grid.clone()
    } else {
        cube.grid.restrict(indices)?
    };
    let mut values = Vec::with_capacity(cube.height * cube.width * indices.len());
    for spectrum in cube.values.chunks_exact(cube.bands) {
        values.extend(indices.iter().map(|&i| spectrum[i]));
    }
    HyperCube::new(cube.height, cube.width, values, grid, cube.calibrated)
}

/// Payload path paired with a header path.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bsq")
}

fn format_wavelengths(grid: &WavelengthGrid) -> String {
    grid.wavelengths()
        .iter()
        .map(|w| format!("{w}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes `cube` as `<path>` (header) plus its `.bsq` payload.
pub fn save_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    if cube.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "refusing to save non-finite cube to {}",
            path.display()
        )));
    }
    let header = format!(
        "samples={}\nlines={}\nbands={}\ndtype=f32le\ninterleave=bsq\nwavelengths={}\ncalibrated={}\n",
        cube.width,
        cube.height,
        cube.bands,
        format_wavelengths(&cube.grid),
        u8::from(cube.calibrated)
    );
    fs::write(path, header).map_err(|e| Error::io(path, e))?;

    let payload = payload_path(path);
    let file = fs::File::create(&payload).map_err(|e| Error::io(&payload, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = Vec::with_capacity(cube.height * cube.width * 4);
    for band in 0..cube.bands {
        buf.clear();
        for v in cube.values.iter().skip(band).step_by(cube.bands) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(|e| Error::io(&payload, e))?;
    }
    out.flush().map_err(|e| Error::io(&payload, e))?;
    Ok(())
}

struct CubeHeader {
    samples: usize,
    lines: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    calibrated: bool,
}

fn parse_header(path: &Path, text: &str) -> Result<CubeHeader> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut samples = None;
    let mut lines = None;
    let mut bands = None;
    let mut wavelengths = None;
    let mut calibrated = None;
    let mut dtype = None;
    let mut interleave = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("line {}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| malformed(format!("{key}: not a non-negative integer: {v:?}")))
        };
        match key {
            "samples" => samples = Some(parse_usize(value)?),
            "lines" => lines = Some(parse_usize(value)?),
            "bands" => bands = Some(parse_usize(value)?),
            "dtype" => dtype = Some(value.to_string()),
            "interleave" => interleave = Some(value.to_string()),
            "calibrated" => {
                calibrated = Some(match value {
                    "0" => false,
                    "1" => true,
                    other => return Err(malformed(format!("calibrated must be 0 or 1, got {other:?}"))),
                })
            }
            "wavelengths" => {
                let list = value
                    .split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| malformed(format!("wavelengths: {e}")))?;
                wavelengths = Some(list);
            }
            _ => {}
        }
    }
    let require = |name: &str, v: Option<usize>| {
        v.ok_or_else(|| malformed(format!("missing key `{name}`")))
    };
    let samples = require("samples", samples)?;
    let lines = require("lines", lines)?;
    let bands = require("bands", bands)?;
    if samples == 0 || lines == 0 || bands == 0 {
        return Err(malformed("samples, lines and bands must be positive".into()));
    }
    match dtype.as_deref() {
        Some("f32le") => {}
        Some(other) => return Err(malformed(format!("unsupported dtype {other:?}"))),
        None => return Err(malformed("missing key `dtype`".into())),
    }
    match interleave.as_deref() {
        Some("bsq") | None => {}
        Some(other) => return Err(malformed(format!("unsupported interleave {other:?}"))),
    }
    let wavelengths = wavelengths.ok_or_else(|| malformed("missing key `wavelengths`".into()))?;
    if wavelengths.len() != bands {
        return Err(malformed(format!(
            "{} wavelengths listed for {bands} bands",
            wavelengths.len()
        )));
    }
    Ok(CubeHeader {
        samples,
        lines,
        bands,
        wavelengths,
        calibrated: calibrated.unwrap_or(false),
    })
}

/// Reads a cube written by [`save_cube`] (or any header/payload pair in the
/// same subset of the ENVI layout).
pub fn load_cube(path: &Path) -> Result<HyperCube> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &text)?;
    let grid = WavelengthGrid::from_list(header.wavelengths).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;

    let payload = payload_path(path);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let n = header.samples * header.lines * header.bands;
    let expected = n as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: payload,
            expected,
            found: bytes.len() as u64,
        });
    }
    let plane = header.samples * header.lines;
    let mut values = vec![0f32; n];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let band = i / plane;
        let pixel = i % plane;
        values[pixel * header.bands + band] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    HyperCube::new(header.lines, header.samples, values, grid, header.calibrated)
}

/// Per-pixel class indices; index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    class_names: Vec<String>,
}

impl LabelMask {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if class_names.is_empty() || class_names.len() > 256 {
            return Err(Error::Validation(format!(
                "a mask needs between 1 and 256 classes, got {}",
                class_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::Validation(format!(
                "label {bad} exceeds class count {}",
                class_names.len()
            )));
        }
        Ok(LabelMask {
            height,
            width,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }
}

/// Display palette for masks: background black, then distinct hues.
fn mask_palette() -> Vec<u8> {
    const BASE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [184, 115, 51],
        [225, 193, 110],
        [170, 170, 180],
        [90, 110, 140],
        [230, 230, 210],
        [60, 160, 60],
        [200, 60, 160],
    ];
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256usize {
        let rgb = BASE.get(i).copied().unwrap_or_else(|| {
            let v = (i * 37 % 256) as u8;
            [v, v.wrapping_mul(3), v.wrapping_mul(7)]
        });
        palette.extend_from_slice(&rgb);
    }
    palette
}

/// Writes the mask as an 8-bit indexed PNG (palette index = class index).
pub fn save_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(mask_palette());
    let to_err = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(&mask.labels).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}

/// Reads an 8-bit indexed or grayscale PNG mask.
pub fn load_mask(path: &Path, class_names: Vec<String>) -> Result<LabelMask> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| malformed(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| malformed(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(malformed(format!(
            "mask must be 8-bit indexed or grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        labels.extend_from_slice(&row[..w]);
    }
    LabelMask::new(h, w, labels, class_names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cube: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// A set of cube/mask pairs sharing one wavelength grid and class list.
///
/// Stored as TOML; relative paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub grid: WavelengthGrid,
    pub entries: Vec<ManifestEntry>,
}

/// One loaded manifest entry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub cube: HyperCube,
    pub mask: LabelMask,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut manifest.entries {
            if entry.cube.is_relative() {
                entry.cube = base.join(&entry.cube);
            }
            if entry.mask.is_relative() {
                entry.mask = base.join(&entry.mask);
            }
        }
        Ok(manifest)
    }

    /// Writes the manifest; entry paths are written as given.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every entry of `split`, checking files exist and cube/mask
    /// dimensions and band counts agree with the manifest.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries_for(split).map(|e| self.load_entry(e)).collect()
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<Sample> {
        let cube = load_cube(&entry.cube)?;
        let mask = load_mask(&entry.mask, self.class_names.clone())?;
        if cube.height() != mask.height() || cube.width() != mask.width() {
            return Err(Error::Validation(format!(
                "{}: cube is {}x{} but mask is {}x{}",
                entry.cube.display(),
                cube.height(),
                cube.width(),
                mask.height(),
                mask.width()
            )));
        }
        if cube.bands() != self.grid.len() {
            return Err(Error::Validation(format!(
                "{}: cube has {} bands, manifest grid has {}",
                entry.cube.display(),
                cube.bands(),
                self.grid.len()
            )));
        }
        let name = entry
            .cube
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Sample { name, cube, mask })
    }

    /// Checks every referenced file and its dimensions.
    pub fn validate(&self) -> Result<()> {
        for entry in &self.entries {
            self.load_entry(entry)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_cube(h: usize, w: usize, grid: WavelengthGrid) -> HyperCube {
        let k = grid.len();
        let values = (0..h * w * k).map(|i| i as f32 * 0.25).collect();
        HyperCube::new(h, w, values, grid, true).unwrap()
    }

    #[test]
    fn weee_grid_endpoints() {
        let grid = WavelengthGrid::weee();
        assert_eq!(wavelength_of(&grid, 0).unwrap(), 415.05);
        assert_eq!(wavelength_of(&grid, 75).unwrap(), 1008.10);
    }

    #[test]
    fn weee_grid_second_band() {
        let grid = WavelengthGrid::weee();
        let expected = 415.05 + 593.05 / 75.0;
        assert!((wavelength_of(&grid, 1).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 422.957_333_333).abs() < 1e-6);
    }

    #[test]
    fn wavelength_out_of_range() {
        let grid = WavelengthGrid::weee();
        assert!(matches!(
            wavelength_of(&grid, 76),
            Err(Error::OutOfRange { index: 76, len: 76 })
        ));
    }

    #[test]
    fn grid_validation() {
        assert!(WavelengthGrid::uniform(500.0, 400.0, 4).is_err());
        assert!(WavelengthGrid::uniform(400.0, 500.0, 1).is_err());
        assert!(WavelengthGrid::explicit(vec![400.0, 400.0]).is_err());
    }

    #[test]
    fn grid_is_strictly_monotone() {
        let w = WavelengthGrid::weee().wavelengths();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn select_identity() {
        let cube = ramp_cube(3, 2, WavelengthGrid::weee());
        let all: Vec<usize> = (0..76).collect();
        assert_eq!(select_channels(&cube, &all).unwrap(), cube);
    }

    #[test]
    fn select_single_band() {
        let cube = ramp_cube(2, 2, WavelengthGrid::weee());
        let one = select_channels(&cube, &[0]).unwrap();
        assert_eq!(one.bands(), 1);
        assert_eq!(one.grid().wavelengths(), vec![415.05]);
        assert_eq!(one.get(1, 1, 0), cube.get(1, 1, 0));
    }

    #[test]
    fn select_rgb_like_bands() {
        let cube = ramp_cube(2, 3, WavelengthGrid::weee());
        let sel = select_channels(&cube, &[6, 17, 27]).unwrap();
        let step = (1008.10 - 415.05) / 75.0;
        let w = sel.grid().wavelengths();
        for (got, idx) in w.iter().zip([6.0, 17.0, 27.0]) {
            assert!((got - (415.05 + idx * step)).abs() < 1e-9);
        }
        assert!((w[0] - 462.49).abs() < 0.01);
        assert!((w[1] - 549.47).abs() < 0.01);
        assert!((w[2] - 628.55).abs() < 0.01);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(sel.pixel(r, c), &[cube.get(r, c, 6), cube.get(r, c, 17), cube.get(r, c, 27)]);
            }
        }
    }

    #[test]
    fn select_rejects_bad_indices() {
        let cube = ramp_cube(1, 1, WavelengthGrid::uniform(400.0, 700.0, 4).unwrap());
        assert!(select_channels(&cube, &[1, 1]).is_err());
        assert!(select_channels(&cube, &[2, 1]).is_err());
        assert!(matches!(
            select_channels(&cube, &[0, 4]),
            Err(Error::OutOfRange { index: 4, .. })
        ));
    }

    #[test]
    fn mask_rejects_out_of_range_labels() {
        assert!(LabelMask::new(1, 2, vec![0, 6], weee_class_names()).is_err());
        assert!(LabelMask::new(1, 2, vec![0, 5], weee_class_names()).is_ok());
    }

    #[test]
    fn weee_classes() {
        let names = weee_class_names();
        assert_eq!(names.len(), 6);
        assert_eq!(names[0], "background");
    }

    #[test]
    fn header_requires_keys() {
        let p = Path::new("x.hdr");
        assert!(matches!(
            parse_header(p, "samples=1\nlines=1\n"),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            parse_header(p, "samples=1\nlines=1\nbands=2\ndtype=f32le\nwavelengths=400\n"),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            parse_header(p, "samples=1\nlines=1\nbands=1\ndtype=f64le\nwavelengths=400\n"),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(parse_header(p, "# c\nsamples=1\nlines=1\nbands=1\ndtype=f32le\nwavelengths=400\n").is_ok());
    }

    #[test]
    fn from_list_recovers_uniform() {
        let grid = WavelengthGrid::weee();
        assert_eq!(WavelengthGrid::from_list(grid.wavelengths()).unwrap(), grid);
        let explicit = WavelengthGrid::from_list(vec![400.0, 410.0, 430.0]).unwrap();
        assert!(matches!(explicit, WavelengthGrid::Explicit { .. }));
    }
}

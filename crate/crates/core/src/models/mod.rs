//! The three segmentation architectures and patch-embedding inflation.
//!
//! * `Spectral1D`: 1×1 convolutions only, every pixel classified from its own
//!   spectrum.
//! * `EncDec2D`: VGG-style encoder (two 3×3 conv + ReLU, then 2×2 max-pool
//!   per stage) and a decoder of stride-2 transposed convolutions followed by
//!   3×3 convs.
//! * `UNet`: `EncDec2D` plus channel concatenation of each encoder stage
//!   output into the matching decoder stage.

mod checkpoint;
mod patch_embed;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Padding, Tensor, Var};

pub use checkpoint::{Checkpoint, TensorFile};
pub use patch_embed::{inflate_patch_embed, PatchEmbedWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Spectral1D,
    EncDec2D,
    UNet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Spectral1D, Arch::EncDec2D, Arch::UNet];

    /// Decoder label used in report tables.
    pub fn decoder_label(self) -> &'static str {
        match self {
            Arch::Spectral1D => "spectral only",
            Arch::EncDec2D => "Encoder-decoder",
            Arch::UNet => "U-Net",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Spectral1D => "spectral1d",
            Arch::EncDec2D => "encdec2d",
            Arch::UNet => "unet",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spectral1d" => Ok(Arch::Spectral1D),
            "encdec2d" => Ok(Arch::EncDec2D),
            "unet" => Ok(Arch::UNet),
            other => Err(Error::Parse(format!(
                "unknown architecture {other:?} (expected spectral1d, encdec2d or unet)"
            ))),
        }
    }
}

/// Declarative model description.
///
/// For `Spectral1D`, `widths` is the hidden channel path and `depth` is 0.
/// For the 2D architectures, `widths[s]` is the channel count of encoder
/// stage `s` and `depth == widths.len()` is the number of pooling stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub in_channels: usize,
    pub num_classes: usize,
    pub widths: Vec<usize>,
    pub depth: usize,
}

impl ModelSpec {
    /// Default layer sizes: `C→32→16→32→classes` for the spectral model,
    /// widths `(16, 32, 64)` over three stages for the 2D models.
    pub fn new(arch: Arch, in_channels: usize, num_classes: usize) -> Self {
        let (widths, depth) = match arch {
            Arch::Spectral1D => (vec![32, 16, 32], 0),
            Arch::EncDec2D | Arch::UNet => (vec![16, 32, 64], 3),
        };
        ModelSpec {
            arch,
            in_channels,
            num_classes,
            widths,
            depth,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.depth = match self.arch {
            Arch::Spectral1D => 0,
            _ => widths.len(),
        };
        self.widths = widths;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("model needs at least one input channel".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("model needs at least 2 classes, got {}", self.num_classes)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid widths {:?}", self.widths)));
        }
        match self.arch {
            Arch::Spectral1D if self.depth != 0 => Err(Error::Config(format!(
                "spectral1d has no pooling stages, got depth {}",
                self.depth
            ))),
            Arch::EncDec2D | Arch::UNet if self.depth != self.widths.len() => Err(Error::Config(format!(
                "depth {} does not match {} stage widths",
                self.depth,
                self.widths.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Spatial multiple the input height and width must satisfy.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// A named learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Part of the encoder (frozen during the warm-up phase of training).
    pub encoder: bool,
}

/// Per-channel standardisation `(x - mean) / std` applied to model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelNorm {
    /// Statistics over every pixel of `[N, C, H, W]` inputs; channels with
    /// (near) zero spread keep unit scale.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for x in inputs {
            let [n, c, h, w] = x.dims4()?;
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::Shape(format!("inputs disagree on channels: {} vs {c}", sum.len())));
            }
            let plane = h * w;
            for b in 0..n {
                for ch in 0..c {
                    let start = (b * c + ch) * plane;
                    for &v in &x.data()[start..start + plane] {
                        sum[ch] += v;
                        sq[ch] += v * v;
                    }
                }
            }
            count += n * plane;
        }
        if count == 0 {
            return Err(Error::Config("cannot fit normalisation without inputs".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / count as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelNorm { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let [_, c, h, w] = x.dims4()?;
        if c != self.mean.len() {
            return Err(Error::Shape(format!("normalisation has {} channels, input {c}", self.mean.len())));
        }
        let plane = h * w;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        Ok(out)
    }
}

/// Built model: its spec plus parameters in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
    input_norm: Option<ChannelNorm>,
}

struct Init {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Init {
    fn tensor(&mut self, name: String, shape: &[usize], fan_in: usize, encoder: bool) {
        let bound = (1.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.params.push(Param { name, value, encoder });
    }

    fn conv(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize, encoder: bool) {
        let fan_in = in_c * k * k;
        self.tensor(format!("{prefix}.weight"), &[out_c, in_c, k, k], fan_in, encoder);
        self.tensor(format!("{prefix}.bias"), &[out_c], fan_in, encoder);
    }

    fn conv1x1(&mut self, prefix: &str, out_c: usize, in_c: usize, encoder: bool) {
        self.tensor(format!("{prefix}.weight"), &[out_c, in_c], in_c, encoder);
        self.tensor(format!("{prefix}.bias"), &[out_c], in_c, encoder);
    }

    fn transpose(&mut self, prefix: &str, in_c: usize, out_c: usize, k: usize) {
        let fan_in = in_c * k * k;
        self.tensor(format!("{prefix}.weight"), &[in_c, out_c, k, k], fan_in, false);
        self.tensor(format!("{prefix}.bias"), &[out_c], fan_in, false);
    }
}

/// Index of the first narrowest hidden layer; layers up to it form the
/// spectral encoder.
fn spectral_bottleneck(widths: &[usize]) -> usize {
    let min = *widths.iter().min().expect("non-empty widths");
    widths.iter().position(|&w| w == min).expect("min exists")
}

/// Builds a model with seeded uniform `±sqrt(1/fan_in)` initialisation.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Vec::new(),
    };
    match spec.arch {
        Arch::Spectral1D => {
            let bottleneck = spectral_bottleneck(&spec.widths);
            let mut in_c = spec.in_channels;
            for (i, &w) in spec.widths.iter().enumerate() {
                init.conv1x1(&format!("layer{i}"), w, in_c, i <= bottleneck);
                in_c = w;
            }
            init.conv1x1("head", spec.num_classes, in_c, false);
        }
        Arch::EncDec2D | Arch::UNet => {
            let mut in_c = spec.in_channels;
            for (s, &w) in spec.widths.iter().enumerate() {
                init.conv(&format!("enc{s}.conv0"), w, in_c, 3, true);
                init.conv(&format!("enc{s}.conv1"), w, w, 3, true);
                in_c = w;
            }
            let skips = spec.arch == Arch::UNet;
            for (s, &w) in spec.widths.iter().enumerate().rev() {
                init.transpose(&format!("dec{s}.up"), in_c, w, 2);
                let cat = if skips { 2 * w } else { w };
                init.conv(&format!("dec{s}.conv0"), w, cat, 3, false);
                init.conv(&format!("dec{s}.conv1"), w, w, 3, false);
                in_c = w;
            }
            init.conv1x1("head", spec.num_classes, in_c, false);
        }
    }
    Ok(Model {
        spec: spec.clone(),
        params: init.params,
        input_norm: None,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_norm(&self) -> Option<&ChannelNorm> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<ChannelNorm>) -> Result<()> {
        if let Some(n) = &norm {
            if n.mean.len() != self.spec.in_channels || n.std.len() != self.spec.in_channels {
                return Err(Error::Config(format!(
                    "normalisation covers {} channels, model takes {}",
                    n.mean.len(),
                    self.spec.in_channels
                )));
            }
        }
        self.input_norm = norm;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Checks an input shape `[N, C, H, W]` against the spec.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(Error::Shape(format!("model input must be [batch, channels, height, width], got {shape:?}")));
        };
        if c != self.spec.in_channels {
            return Err(Error::Config(format!(
                "model expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let m = self.spec.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Contract(format!(
                "{} with depth {} needs height and width to be multiples of {m}, got {h}x{w}",
                self.spec.arch, self.spec.depth
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`. Parameters are added as leaves,
    /// requiring gradients where `trainable` says so, and returned in
    /// declaration order with the logits.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, trainable: impl Fn(&Param) -> bool) -> Result<(Var, Vec<Var>)> {
        self.check_input(g.value(x).shape())?;
        let x = match &self.input_norm {
            Some(norm) => {
                let scaled = norm.apply(g.value(x))?;
                g.constant(scaled)
            }
            None => x,
        };
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable(p)))
            .collect();
        let mut next = vars.iter().copied();
        let mut take = move || next.next().expect("parameter list matches architecture");

        let logits = match self.spec.arch {
            Arch::Spectral1D => {
                let mut h = x;
                for _ in &self.spec.widths {
                    let (w, b) = (take(), take());
                    let z = g.conv1x1(h, w, Some(b))?;
                    h = g.relu(z);
                }
                let (w, b) = (take(), take());
                g.conv1x1(h, w, Some(b))?
            }
            Arch::EncDec2D | Arch::UNet => {
                let mut h = x;
                let mut skips = Vec::with_capacity(self.spec.depth);
                for _ in 0..self.spec.depth {
                    for _ in 0..2 {
                        let (w, b) = (take(), take());
                        let z = g.conv2d(h, w, Some(b), 1, Padding::Same)?;
                        h = g.relu(z);
                    }
                    skips.push(h);
                    h = g.maxpool2d(h, 2, 2)?;
                }
                for skip in skips.into_iter().rev() {
                    let (w, b) = (take(), take());
                    h = g.conv_transpose2d(h, w, Some(b), 2)?;
                    if self.spec.arch == Arch::UNet {
                        h = g.concat_channels(h, skip)?;
                    }
                    for _ in 0..2 {
                        let (w, b) = (take(), take());
                        let z = g.conv2d(h, w, Some(b), 1, Padding::Same)?;
                        h = g.relu(z);
                    }
                }
                let (w, b) = (take(), take());
                g.conv1x1(h, w, Some(b))?
            }
        };
        Ok((logits, vars))
    }

    /// Logits `[N, num_classes, H, W]` for `x: [N, in_channels, H, W]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (logits, _) = self.forward_graph(&mut g, xv, |_| false)?;
        Ok(g.value(logits).clone())
    }

    /// Replaces parameter values, checking names and shapes.
    pub fn load_params(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (param, (name, value)) in self.params.iter_mut().zip(tensors) {
            if param.name != name || param.value.shape() != value.shape() {
                return Err(Error::Validation(format!(
                    "parameter mismatch: expected {} {:?}, got {name} {:?}",
                    param.name,
                    param.value.shape(),
                    value.shape()
                )));
            }
            param.value = value;
        }
        Ok(())
    }
}

/// Per-pixel argmax over the class axis of `[N, C, H, W]` logits.
pub fn argmax_classes(logits: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = logits.dims4()?;
    let plane = h * w;
    let data = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for bi in 0..n {
        for p in 0..plane {
            let mut best = 0;
            for k in 1..c {
                if data[bi * c * plane + k * plane + p] > data[bi * c * plane + best * plane + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

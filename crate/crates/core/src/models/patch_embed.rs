use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Graph, Padding, Tensor};

use super::checkpoint::TensorFile;

/// Patch-embedding layer of a vision transformer: a `p×p` convolution with
/// stride `p` mapping `channels` inputs to `embed_dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedWeights {
    weight: Tensor,
    bias: Tensor,
    patch: usize,
}

impl PatchEmbedWeights {
    /// `weight: [embed_dim, channels, patch, patch]`, `bias: [embed_dim]`.
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [embed, channels, ph, pw] = weight.dims4()?;
        if ph != pw {
            return Err(Error::Shape(format!("patch must be square, got {ph}x{pw}")));
        }
        if channels == 0 {
            return Err(Error::Shape("patch embedding needs at least one channel".into()));
        }
        if bias.len() != embed {
            return Err(Error::Shape(format!("bias has {} entries for embed dim {embed}", bias.len())));
        }
        if weight.data().iter().chain(bias.data()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("patch embedding contains non-finite weights".into()));
        }
        Ok(PatchEmbedWeights { weight, bias, patch: ph })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Patch tokens `[N, embed_dim, H/p, W/p]` for `x: [N, channels, H, W]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(x.clone());
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        let y = g.conv2d(x, w, Some(b), self.patch, Padding::Valid)?;
        Ok(g.value(y).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = toml::Table::new();
        meta.insert("kind".into(), "patch_embed".into());
        meta.insert("patch".into(), (self.patch as i64).into());
        TensorFile {
            meta,
            tensors: vec![
                ("weight".into(), self.weight.clone()),
                ("bias".into(), self.bias.clone()),
            ],
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::load(path)?;
        let mut weight = None;
        let mut bias = None;
        for (name, t) in file.tensors {
            match name.as_str() {
                "weight" => weight = Some(t),
                "bias" => bias = Some(t),
                _ => {}
            }
        }
        match (weight, bias) {
            (Some(w), Some(b)) => PatchEmbedWeights::new(w, b),
            _ => Err(Error::Validation(format!(
                "{}: patch embedding file needs `weight` and `bias` tensors",
                path.display()
            ))),
        }
    }
}

/// Widens a 3-channel (RGB) patch embedding to `target_channels` inputs by
/// copying source channel `j mod 3` into channel `j`. Bias is kept and no
/// rescaling is applied.
pub fn inflate_patch_embed(rgb: &PatchEmbedWeights, target_channels: usize) -> Result<PatchEmbedWeights> {
    if rgb.channels() != 3 {
        return Err(Error::Contract(format!(
            "patch embedding inflation needs a 3-channel source, got {}",
            rgb.channels()
        )));
    }
    if target_channels == 0 {
        return Err(Error::Contract("target channel count must be positive".into()));
    }
    let [embed, _, p, _] = rgb.weight.dims4()?;
    let taps = p * p;
    let src = rgb.weight.data();
    let mut data = Vec::with_capacity(embed * target_channels * taps);
    for e in 0..embed {
        for j in 0..target_channels {
            let start = (e * 3 + j % 3) * taps;
            data.extend_from_slice(&src[start..start + taps]);
        }
    }
    let weight = Tensor::new(&[embed, target_channels, p, p], data)?;
    PatchEmbedWeights::new(weight, rgb.bias.clone())
}

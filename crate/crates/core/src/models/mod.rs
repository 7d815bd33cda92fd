//! Declarative ViT configurations and the network built from them.
//!
//! A [`ModelConfig`] pairs a [`StemSpec`] (the layers before the transformer
//! blocks) with an [`EncoderSpec`]. Configs are plain values; [`Model`] owns
//! the parameters.

mod canonical;
mod scale;
mod vit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

pub use canonical::{canonical_config, canonical_names, canonical_stem, stem_names, CANONICAL_PAIRS};
pub use scale::{scaled_config, ScaleSpec};
pub use vit::{ForwardOutput, Model, Param, ParamClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// One non-overlapping `p×p`, stride-`p` convolution.
    Patchify,
    /// Overlapping 3×3 convolutions ending in a 1×1 projection.
    Conv,
    /// Patchify followed by a norm and ReLU.
    PatchifyBnRelu,
    /// Anything else, e.g. the S1–S4 ablation stems.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemNorm {
    Bn,
    Ln,
    None,
}

/// Convolutional layers before the transformer encoder.
///
/// Every non-final layer is followed by `norm` (if any) and a ReLU. The final
/// layer gets `final_norm` plus a ReLU when `final_norm` is not `none`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kind: StemKind,
    pub kernel_sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub paddings: Vec<usize>,
    pub channels: Vec<usize>,
    pub norm: StemNorm,
    #[serde(default = "no_norm")]
    pub final_norm: StemNorm,
}

fn no_norm() -> StemNorm {
    StemNorm::None
}

/// One convolution of a stem with its resolved geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input_size: usize,
    pub output_size: usize,
    pub norm: StemNorm,
    /// Conv bias is dropped when a norm follows (the norm has its own).
    pub has_bias: bool,
}

impl StemSpec {
    pub fn patchify(patch: usize, width: usize) -> Self {
        Self {
            kind: StemKind::Patchify,
            kernel_sizes: vec![patch],
            strides: vec![patch],
            paddings: vec![0],
            channels: vec![width],
            norm: StemNorm::None,
            final_norm: StemNorm::None,
        }
    }

    pub fn depth(&self) -> usize {
        self.kernel_sizes.len()
    }

    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    /// Whether the kind is one of the single-patchify-layer stems.
    pub fn is_patchify(&self) -> bool {
        matches!(self.kind, StemKind::Patchify | StemKind::PatchifyBnRelu)
    }

    /// Structural checks that do not depend on the encoder.
    pub fn validate(&self) -> Result<()> {
        let n = self.kernel_sizes.len();
        if n == 0
            || self.strides.len() != n
            || self.paddings.len() != n
            || self.channels.len() != n
        {
            return Err(Error::Config(format!(
                "stem kernel_sizes, strides, paddings and channels must have equal length >= 1 \
                 (got {}, {}, {}, {})",
                n,
                self.strides.len(),
                self.paddings.len(),
                self.channels.len()
            )));
        }
        if self.kernel_sizes.contains(&0) || self.strides.contains(&0) || self.channels.contains(&0) {
            return Err(Error::Config("stem kernel sizes, strides and channels must be positive".into()));
        }
        if self.is_patchify() {
            let (k, s, p) = (self.kernel_sizes[0], self.strides[0], self.paddings[0]);
            if n != 1 || k != s || p != 0 {
                return Err(Error::Config(format!(
                    "patchify stem must be a single layer with kernel == stride and padding 0 \
                     (got {n} layers, kernel {k}, stride {s}, padding {p})"
                )));
            }
        }
        match (self.kind, self.final_norm) {
            (StemKind::PatchifyBnRelu, StemNorm::None) => Err(Error::Config(
                "patchify_bn_relu stem needs a final_norm".into(),
            )),
            (StemKind::Patchify, f) if f != StemNorm::None => Err(Error::Config(
                "plain patchify stem has no final_norm; use patchify_bn_relu".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Resolves per-layer geometry for a square `image_size` input.
    pub fn layers(&self, image_size: usize) -> Result<Vec<StemLayer>> {
        self.validate()?;
        let n = self.depth();
        let mut size = image_size;
        let mut in_ch = 3;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (k, s, p) = (self.kernel_sizes[i], self.strides[i], self.paddings[i]);
            let next = conv_output_extent(size, k, s, p).ok_or_else(|| {
                Error::Config(format!(
                    "stem layer {i} (kernel {k}, stride {s}, padding {p}) does not fit a {size}px input"
                ))
            })?;
            let norm = if i + 1 == n { self.final_norm } else { self.norm };
            out.push(StemLayer {
                in_channels: in_ch,
                out_channels: self.channels[i],
                kernel: k,
                stride: s,
                padding: p,
                input_size: size,
                output_size: next,
                norm,
                has_bias: norm == StemNorm::None,
            });
            size = next;
            in_ch = self.channels[i];
        }
        Ok(out)
    }
}

/// Transformer encoder, token grid and classifier sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub hidden_size: usize,
    pub mlp_mult: f64,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub num_classes: usize,
}

impl EncoderSpec {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch tokens plus the class token.
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.hidden_size as f64 * self.mlp_mult).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("num_classes", self.num_classes),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {field} must be positive")));
        }
        if !(self.mlp_mult > 0.0) {
            return Err(Error::Config(format!("mlp_mult must be positive, got {}", self.mlp_mult)));
        }
        let hidden = self.hidden_size as f64 * self.mlp_mult;
        if (hidden - hidden.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mlp hidden size {hidden} (hidden_size × mlp_mult) is not an integer"
            )));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "num_heads {} does not divide hidden_size {}",
                self.num_heads, self.hidden_size
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "patch_size {} does not divide image_size {}",
                self.patch_size, self.image_size
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_INIT_STD: f64 = 0.02;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

fn default_norm_eps() -> f64 {
    DEFAULT_NORM_EPS
}

fn default_bn_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

/// Everything needed to build a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub stem: StemSpec,
    pub encoder: EncoderSpec,
    /// Std of the truncated-normal init for weights and embeddings.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, stem: StemSpec, encoder: EncoderSpec) -> Self {
        Self {
            name: name.into(),
            stem,
            encoder,
            init_std: DEFAULT_INIT_STD,
            norm_eps: DEFAULT_NORM_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Checks every structural invariant, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let layers = self.stem.layers(self.encoder.image_size)?;
        let d = self.encoder.hidden_size;
        let last = *self.stem.channels.last().expect("validated non-empty");
        if last != d {
            return Err(Error::Config(format!(
                "stem output channels {last} must equal encoder hidden_size {d}"
            )));
        }
        if self.stem.downsampling() != self.encoder.patch_size {
            return Err(Error::Config(format!(
                "stem downsampling factor {} must equal patch_size {}",
                self.stem.downsampling(),
                self.encoder.patch_size
            )));
        }
        let grid = layers.last().expect("non-empty").output_size;
        if grid != self.encoder.grid() {
            return Err(Error::Config(format!(
                "stem output grid {grid} must equal image_size / patch_size = {}",
                self.encoder.grid()
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::Config(format!("norm_eps must be non-negative, got {}", self.norm_eps)));
        }
        Ok(())
    }
}

//! Canonical model and stem definitions.

use super::{EncoderSpec, ModelConfig, StemKind, StemNorm, StemSpec};
use crate::error::{Error, Result};

const IMAGE: usize = 224;
const PATCH: usize = 16;
const CLASSES: usize = 1000;

/// (patchify, convolutional) counterparts that must stay flop-matched.
pub const CANONICAL_PAIRS: [(&str, &str); 4] = [
    ("ViT_P-1GF", "ViT_C-1GF"),
    ("ViT_P-4GF", "ViT_C-4GF"),
    ("ViT_P-18GF", "ViT_C-18GF"),
    ("ViT_P-36GF", "ViT_C-36GF"),
];

const NAMES: [&str; 16] = [
    "ViT_P-1GF",
    "ViT_P-4GF",
    "ViT_P-18GF",
    "ViT_P-36GF",
    "ViT_C-1GF",
    "ViT_C-4GF",
    "ViT_C-18GF",
    "ViT_C-36GF",
    "S1@4GF",
    "S2@4GF",
    "S3@4GF",
    "S4@4GF",
    "ViT_P(bn)-4GF",
    "ViT_C(ln)-4GF",
    "ViT_P-16GF-48blk",
    "ViT_C-16GF-47blk",
];

const STEMS: [&str; 6] = ["P", "C", "S1", "S2", "S3", "S4"];

pub fn canonical_names() -> &'static [&'static str] {
    &NAMES
}

/// Names accepted by [`canonical_stem`] (all at the 4GF width).
pub fn stem_names() -> &'static [&'static str] {
    &STEMS
}

fn encoder(d: usize, mlp_mult: f64, heads: usize, blocks: usize) -> EncoderSpec {
    EncoderSpec {
        hidden_size: d,
        mlp_mult,
        num_heads: heads,
        num_blocks: blocks,
        image_size: IMAGE,
        patch_size: PATCH,
        num_classes: CLASSES,
    }
}

fn stem(kind: StemKind, kernels: &[usize], strides: &[usize], paddings: &[usize], channels: &[usize]) -> StemSpec {
    StemSpec {
        kind,
        kernel_sizes: kernels.to_vec(),
        strides: strides.to_vec(),
        paddings: paddings.to_vec(),
        channels: channels.to_vec(),
        norm: StemNorm::Bn,
        final_norm: StemNorm::None,
    }
}

/// Stride-2 3×3 layers with the given channels, then a 1×1 projection to `d`.
/// A channel count equal to its predecessor marks a stride-1 layer.
fn conv_stem(channels: &[usize], d: usize) -> StemSpec {
    let mut kernels = Vec::new();
    let mut strides = Vec::new();
    let mut paddings = Vec::new();
    let mut prev = 0;
    for &c in channels {
        kernels.push(3);
        strides.push(if c == prev { 1 } else { 2 });
        paddings.push(1);
        prev = c;
    }
    kernels.push(1);
    strides.push(1);
    paddings.push(0);
    let mut chans = channels.to_vec();
    chans.push(d);
    stem(StemKind::Conv, &kernels, &strides, &paddings, &chans)
}

fn stem_c_1gf() -> StemSpec {
    conv_stem(&[24, 48, 96, 192], 192)
}

fn stem_c_4gf() -> StemSpec {
    conv_stem(&[48, 96, 192, 384], 384)
}

fn stem_c_18gf(d: usize) -> StemSpec {
    conv_stem(&[64, 128, 128, 256, 256, 512], d)
}

/// Stems from the stem-design ablation table, at the 4GF width (d = 384).
pub fn canonical_stem(name: &str) -> Result<StemSpec> {
    let custom = |k: [usize; 5], s: [usize; 5], c: [usize; 5]| {
        stem(StemKind::Custom, &k, &s, &[1, 1, 1, 0, 0], &c)
    };
    Ok(match name {
        "P" => StemSpec::patchify(PATCH, 384),
        "C" => stem_c_4gf(),
        "S1" => custom([3, 3, 3, 2, 1], [2, 2, 2, 2, 1], [42, 104, 208, 416, 384]),
        "S2" => custom([3, 3, 3, 4, 1], [2, 2, 1, 4, 1], [32, 64, 128, 256, 384]),
        "S3" => custom([3, 3, 3, 8, 1], [2, 1, 1, 8, 1], [17, 34, 68, 136, 384]),
        "S4" => custom([3, 3, 3, 16, 1], [1, 1, 1, 16, 1], [8, 16, 32, 64, 384]),
        _ => {
            return Err(Error::UnknownModel {
                name: name.to_string(),
                valid: STEMS.iter().map(|s| s.to_string()).collect(),
            })
        }
    })
}

pub fn canonical_config(name: &str) -> Result<ModelConfig> {
    let p = |d| StemSpec::patchify(PATCH, d);
    let (stem, enc) = match name {
        "ViT_P-1GF" => (p(192), encoder(192, 3.0, 3, 12)),
        "ViT_P-4GF" => (p(384), encoder(384, 3.0, 6, 12)),
        "ViT_P-18GF" => (p(768), encoder(768, 4.0, 12, 12)),
        "ViT_P-36GF" => (p(1024), encoder(1024, 4.0, 16, 14)),
        "ViT_C-1GF" => (stem_c_1gf(), encoder(192, 3.0, 3, 11)),
        "ViT_C-4GF" => (stem_c_4gf(), encoder(384, 3.0, 6, 11)),
        "ViT_C-18GF" => (stem_c_18gf(768), encoder(768, 4.0, 12, 11)),
        // the 36GF model reuses the 18GF stem, projected to its own width
        "ViT_C-36GF" => (stem_c_18gf(1024), encoder(1024, 4.0, 16, 13)),
        "S1@4GF" | "S2@4GF" | "S3@4GF" | "S4@4GF" => {
            (canonical_stem(&name[..2])?, encoder(384, 3.0, 6, 11))
        }
        "ViT_P(bn)-4GF" => {
            let mut s = p(384);
            s.kind = StemKind::PatchifyBnRelu;
            s.final_norm = StemNorm::Bn;
            (s, encoder(384, 3.0, 6, 12))
        }
        "ViT_C(ln)-4GF" => {
            let mut s = stem_c_4gf();
            s.norm = StemNorm::Ln;
            (s, encoder(384, 3.0, 6, 11))
        }
        "ViT_P-16GF-48blk" => (p(384), encoder(384, 3.0, 6, 48)),
        "ViT_C-16GF-47blk" => (stem_c_4gf(), encoder(384, 3.0, 6, 47)),
        _ => {
            return Err(Error::UnknownModel {
                name: name.to_string(),
                valid: NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(ModelConfig::new(name, stem, enc))
}

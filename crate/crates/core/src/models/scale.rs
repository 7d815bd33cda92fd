use serde::{Deserialize, Serialize};

use super::{ModelConfig, StemSpec};
use crate::error::{Error, Result};

/// Shrinks (or grows) a config for desk-scale experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub image_size: usize,
    pub patch_size: usize,
    pub width_factor: f64,
    pub depth_factor: f64,
    /// Overrides the head count; otherwise the base count is kept and the
    /// width is rounded to a multiple of it.
    #[serde(default)]
    pub num_heads: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl ScaleSpec {
    pub fn new(image_size: usize, patch_size: usize, width_factor: f64, depth_factor: f64) -> Self {
        Self {
            image_size,
            patch_size,
            width_factor,
            depth_factor,
            num_heads: None,
            num_classes: None,
        }
    }

    pub fn heads(mut self, heads: usize) -> Self {
        self.num_heads = Some(heads);
        self
    }

    pub fn classes(mut self, classes: usize) -> Self {
        self.num_classes = Some(classes);
        self
    }
}

fn round_positive(v: f64) -> usize {
    (v.round() as usize).max(1)
}

/// Scales width, depth and resolution while keeping every structural
/// invariant. Convolutional stems keep their one-block offset: depth is scaled
/// on the patchify-equivalent block count and the offset is removed again.
pub fn scaled_config(base: &ModelConfig, spec: &ScaleSpec) -> Result<ModelConfig> {
    if !(spec.width_factor > 0.0 && spec.depth_factor >= 0.0)
        || !spec.width_factor.is_finite()
        || !spec.depth_factor.is_finite()
    {
        return Err(Error::Config(format!(
            "scale factors must be finite with width > 0 and depth >= 0 (got {}, {})",
            spec.width_factor, spec.depth_factor
        )));
    }
    let enc = &base.encoder;
    let heads = spec.num_heads.unwrap_or(enc.num_heads);
    let classes = spec.num_classes.unwrap_or(enc.num_classes);
    let identity = spec.width_factor == 1.0
        && spec.depth_factor == 1.0
        && spec.image_size == enc.image_size
        && spec.patch_size == enc.patch_size
        && heads == enc.num_heads
        && classes == enc.num_classes;
    if identity {
        return Ok(base.clone());
    }
    if heads == 0 || spec.patch_size == 0 {
        return Err(Error::Config("num_heads and patch_size must be positive".into()));
    }

    let d = round_positive(enc.hidden_size as f64 * spec.width_factor / heads as f64) * heads;
    let offset = usize::from(!base.stem.is_patchify());
    let reference = (enc.num_blocks + offset) as f64 * spec.depth_factor;
    let blocks = (reference.round() as usize).saturating_sub(offset);

    let stem = scale_stem(&base.stem, d, spec.width_factor, spec.patch_size)?;
    let mut cfg = base.clone();
    cfg.name = format!("{}@{}px/p{}/d{}/L{}", base.name, spec.image_size, spec.patch_size, d, blocks);
    cfg.stem = stem;
    cfg.encoder.hidden_size = d;
    cfg.encoder.num_heads = heads;
    cfg.encoder.num_blocks = blocks;
    cfg.encoder.image_size = spec.image_size;
    cfg.encoder.patch_size = spec.patch_size;
    cfg.encoder.num_classes = classes;
    cfg.validate()?;
    Ok(cfg)
}

fn scale_stem(stem: &StemSpec, d: usize, width: f64, patch: usize) -> Result<StemSpec> {
    if stem.is_patchify() {
        let mut s = stem.clone();
        s.kernel_sizes = vec![patch];
        s.strides = vec![patch];
        s.channels = vec![d];
        return Ok(s);
    }
    let mut s = stem.clone();
    let n = s.depth();
    for c in &mut s.channels[..n - 1] {
        *c = round_positive(*c as f64 * width);
    }
    s.channels[n - 1] = d;
    // drop leading layers until the stem downsamples by exactly `patch`
    while s.downsampling() > patch && s.depth() > 1 {
        s.kernel_sizes.remove(0);
        s.strides.remove(0);
        s.paddings.remove(0);
        s.channels.remove(0);
    }
    if s.downsampling() != patch {
        return Err(Error::Config(format!(
            "cannot rescale stem with strides {:?} to patch size {patch}",
            stem.strides
        )));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::canonical_config;

    #[test]
    fn desk_scale_vit_p() {
        let base = canonical_config("ViT_P-4GF").unwrap();
        let spec = ScaleSpec::new(32, 4, 1.0 / 6.0, 0.25).heads(4);
        let cfg = scaled_config(&base, &spec).unwrap();
        assert_eq!(cfg.encoder.hidden_size, 64);
        assert_eq!(cfg.encoder.num_blocks, 3);
        assert_eq!(cfg.encoder.tokens(), 65);
    }

    #[test]
    fn desk_scale_vit_c_keeps_block_offset() {
        let base = canonical_config("ViT_C-4GF").unwrap();
        let spec = ScaleSpec::new(32, 4, 1.0 / 6.0, 0.25).heads(4);
        let cfg = scaled_config(&base, &spec).unwrap();
        assert_eq!(cfg.encoder.hidden_size, 64);
        assert_eq!(cfg.encoder.num_blocks, 2);
        assert_eq!(cfg.stem.channels, [32, 64, 64]);
        assert_eq!(cfg.stem.strides, [2, 2, 1]);
    }

    #[test]
    fn unit_factors_are_identity() {
        for name in ["ViT_P-4GF", "ViT_C-18GF", "S2@4GF"] {
            let base = canonical_config(name).unwrap();
            let cfg = scaled_config(&base, &ScaleSpec::new(224, 16, 1.0, 1.0)).unwrap();
            assert_eq!(cfg, base);
        }
    }

    #[test]
    fn width_rounds_to_multiple_of_heads() {
        // 384 × 0.1 = 38.4 → nearest multiple of 6 heads is 36
        let base = canonical_config("ViT_P-4GF").unwrap();
        let cfg = scaled_config(&base, &ScaleSpec::new(224, 16, 0.1, 1.0)).unwrap();
        assert_eq!(cfg.encoder.hidden_size, 36);
        assert_eq!(cfg.encoder.num_heads, 6);
    }

    #[test]
    fn unreachable_patch_size_is_rejected() {
        let base = canonical_config("S4@4GF").unwrap();
        assert!(scaled_config(&base, &ScaleSpec::new(32, 4, 0.5, 0.5)).is_err());
    }
}

//! Label smoothing, mixup and CutMix, plus the datasets they are applied to.

mod data;

pub use data::{load_image_dir, synth_dataset, Dataset, SplitDataset, SynthSpec};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, TARGET_SUM_TOL};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    #[default]
    None,
    Mixup,
    Cutmix,
    /// Mixup or CutMix with probability ½ each, per batch.
    Alternate,
}

fn d_mixup() -> f64 {
    0.8
}
fn d_cutmix() -> f64 {
    1.0
}
fn d_eps() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    #[serde(default = "d_mixup")]
    pub mixup_alpha: f64,
    #[serde(default = "d_cutmix")]
    pub cutmix_alpha: f64,
    #[serde(default = "d_eps")]
    pub smoothing_eps: f64,
    #[serde(default)]
    pub mix_mode: MixMode,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mixup_alpha: d_mixup(),
            cutmix_alpha: d_cutmix(),
            smoothing_eps: d_eps(),
            mix_mode: MixMode::None,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            return Err(Error::Config(format!("smoothing_eps must be in [0, 1), got {}", self.smoothing_eps)));
        }
        let needs_mixup = matches!(self.mix_mode, MixMode::Mixup | MixMode::Alternate);
        let needs_cutmix = matches!(self.mix_mode, MixMode::Cutmix | MixMode::Alternate);
        if needs_mixup && !(self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!("mixup_alpha must be positive, got {}", self.mixup_alpha)));
        }
        if needs_cutmix && !(self.cutmix_alpha > 0.0) {
            return Err(Error::Config(format!("cutmix_alpha must be positive, got {}", self.cutmix_alpha)));
        }
        Ok(())
    }
}

/// Images `[B, C, H, W]` with target distributions `[B, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Element = f32> {
    pub images: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Element> Batch<T> {
    pub fn new(images: Tensor<T>, targets: Tensor<T>) -> Result<Self> {
        let (is, ts) = (images.shape(), targets.shape());
        if is.len() != 4 || ts.len() != 2 || is[0] != ts[0] {
            return Err(Error::dim("batch", is, ts));
        }
        let k = ts[1];
        for (row, t) in targets.data().chunks_exact(k).enumerate() {
            let s: f64 = t.iter().map(|v| v.to_f64_lossy()).sum();
            if (s - 1.0).abs() > TARGET_SUM_TOL {
                return Err(Error::Input(format!("target row {row} sums to {s}")));
            }
        }
        Ok(Self { images, targets })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image_extent(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }
}

/// `1 − ε + ε/K` on the true class, `ε/K` elsewhere.
pub fn smooth_labels<T: Element>(classes: &[usize], k: usize, eps: f64) -> Result<Tensor<T>> {
    if classes.is_empty() || k == 0 {
        return Err(Error::Input("smooth_labels needs at least one label and one class".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Input(format!("smoothing eps must be in [0, 1), got {eps}")));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::Input(format!("class index {c} out of range for {k} classes")));
    }
    let off = eps / k as f64;
    let on = 1.0 - eps + off;
    Ok(Tensor::from_fn([classes.len(), k], |i| {
        T::from_f64_lossy(if classes[i / k] == i % k { on } else { off })
    }))
}

/// Draws from Beta(α, α) as a ratio of two Gamma(α, 1) variates.
pub fn sample_beta(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("beta alpha {alpha}: {e}")))?;
    let (x, y) = (gamma.sample(rng), gamma.sample(rng));
    Ok(if x + y > 0.0 { x / (x + y) } else { 0.5 })
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Input(format!("{perm:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

fn mix_targets<T: Element>(targets: &Tensor<T>, perm: &[usize], lambda: f64) -> Tensor<T> {
    let k = targets.shape()[1];
    let t = targets.data();
    Tensor::from_fn(targets.shape().to_vec(), |i| {
        let (b, j) = (i / k, i % k);
        T::from_f64_lossy(lambda * t[i].to_f64_lossy() + (1.0 - lambda) * t[perm[b] * k + j].to_f64_lossy())
    })
}

/// `x ← λ·x + (1 − λ)·x[perm]`, targets likewise.
pub fn mixup_with<T: Element>(batch: &Batch<T>, lambda: f64, perm: &[usize]) -> Result<Batch<T>> {
    check_perm(perm, batch.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let per = batch.images.numel() / batch.len();
    let x = batch.images.data();
    let images = Tensor::from_fn(batch.images.shape().to_vec(), |i| {
        let (b, r) = (i / per, i % per);
        T::from_f64_lossy(lambda * x[i].to_f64_lossy() + (1.0 - lambda) * x[perm[b] * per + r].to_f64_lossy())
    });
    Ok(Batch { images, targets: mix_targets(&batch.targets, perm, lambda) })
}

/// Mixup with λ ~ Beta(α, α) and a uniformly random partner permutation.
pub fn mixup_batch<T: Element>(batch: &Batch<T>, alpha: f64, rng: &mut impl Rng) -> Result<Batch<T>> {
    let lambda = sample_beta(alpha, rng)?;
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    mixup_with(batch, lambda, &perm)
}

/// Half-open pixel rectangle `[top, top+height) × [left, left+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// A box of roughly `(1 − λ)·H·W` pixels centred at a uniform point, clipped
    /// to the image.
    pub fn sample(lambda: f64, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let ratio = (1.0 - lambda).clamp(0.0, 1.0).sqrt();
        let (ch, cw) = ((h as f64 * ratio) as i64, (w as f64 * ratio) as i64);
        let (cy, cx) = (rng.random_range(0..h as i64), rng.random_range(0..w as i64));
        let y0 = (cy - ch / 2).clamp(0, h as i64);
        let y1 = (cy + ch - ch / 2).clamp(0, h as i64);
        let x0 = (cx - cw / 2).clamp(0, w as i64);
        let x1 = (cx + cw - cw / 2).clamp(0, w as i64);
        Self {
            top: y0 as usize,
            left: x0 as usize,
            height: (y1 - y0) as usize,
            width: (x1 - x0) as usize,
        }
    }
}

/// Pastes `cut` from each partner image and mixes targets by the effective
/// `λ = 1 − area/(H·W)`, which is returned alongside the batch.
pub fn cutmix_with<T: Element>(batch: &Batch<T>, cut: CutBox, perm: &[usize]) -> Result<(Batch<T>, f64)> {
    check_perm(perm, batch.len())?;
    let (c, h, w) = batch.image_extent();
    if cut.top + cut.height > h || cut.left + cut.width > w {
        return Err(Error::Input(format!("cut box {cut:?} exceeds {h}x{w} image")));
    }
    let lambda = 1.0 - cut.area() as f64 / (h * w) as f64;
    let mut images = batch.images.clone();
    let src = batch.images.data();
    let dst = images.data_mut();
    let per = c * h * w;
    for (b, &p) in perm.iter().enumerate() {
        for ch in 0..c {
            for y in cut.top..cut.top + cut.height {
                let row = ch * h * w + y * w;
                let span = row + cut.left..row + cut.left + cut.width;
                dst[b * per + span.start..b * per + span.end].copy_from_slice(&src[p * per + span.start..p * per + span.end]);
            }
        }
    }
    let targets = mix_targets(&batch.targets, perm, lambda);
    Ok((Batch { images, targets }, lambda))
}

pub fn cutmix_batch<T: Element>(batch: &Batch<T>, alpha: f64, rng: &mut impl Rng) -> Result<(Batch<T>, f64)> {
    let lambda = sample_beta(alpha, rng)?;
    let (_, h, w) = batch.image_extent();
    let cut = CutBox::sample(lambda, h, w, rng);
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    cutmix_with(batch, cut, &perm)
}

/// Per-image transform applied before mixing; receives `[C, H, W]` pixels.
pub type ImageOp = Box<dyn Fn(&mut [f32], [usize; 3], &mut ChaCha8Rng) + Send + Sync>;

/// Stateful augmentation pipeline owning its RNG stream.
pub struct Augmenter {
    cfg: AugmentConfig,
    rng: ChaCha8Rng,
    ops: Vec<ImageOp>,
}

impl std::fmt::Debug for Augmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Augmenter").field("cfg", &self.cfg).field("ops", &self.ops.len()).finish()
    }
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed), cfg, ops: Vec::new() })
    }

    pub fn with_image_op(mut self, op: ImageOp) -> Self {
        self.ops.push(op);
        self
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn apply(&mut self, mut batch: Batch<f32>) -> Result<Batch<f32>> {
        if !self.ops.is_empty() {
            let (c, h, w) = batch.image_extent();
            for img in batch.images.data_mut().chunks_exact_mut(c * h * w) {
                for op in &self.ops {
                    op(img, [c, h, w], &mut self.rng);
                }
            }
        }
        let mode = match self.cfg.mix_mode {
            MixMode::Alternate if self.rng.random_bool(0.5) => MixMode::Mixup,
            MixMode::Alternate => MixMode::Cutmix,
            m => m,
        };
        match mode {
            MixMode::Mixup => mixup_batch(&batch, self.cfg.mixup_alpha, &mut self.rng),
            MixMode::Cutmix => cutmix_batch(&batch, self.cfg.cutmix_alpha, &mut self.rng).map(|(b, _)| b),
            _ => Ok(batch),
        }
    }
}

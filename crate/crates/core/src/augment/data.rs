use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{smooth_labels, Batch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHANNELS: usize = 3;

/// Labelled RGB images stored contiguously as `[n, 3, size, size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<usize>,
    image_size: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<usize>, image_size: usize, num_classes: usize) -> Result<Self> {
        let per = CHANNELS * image_size * image_size;
        if image_size == 0 || images.len() != labels.len() * per {
            return Err(Error::Input(format!(
                "{} pixels do not form {} images of {image_size}x{image_size}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Input(format!("label {c} out of range for {num_classes} classes")));
        }
        Ok(Self { images, labels, image_size, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = CHANNELS * self.image_size * self.image_size;
        &self.images[i * per..(i + 1) * per]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn images(&self, indices: &[usize]) -> Tensor<f32> {
        let s = self.image_size;
        let data = indices.iter().flat_map(|&i| self.image(i).iter().copied()).collect();
        Tensor::new([indices.len(), CHANNELS, s, s], data).expect("non-empty index set")
    }

    /// Images at `indices` with label-smoothed targets.
    pub fn batch(&self, indices: &[usize], smoothing_eps: f64) -> Result<Batch<f32>> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let classes: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(self.images(indices), smooth_labels(&classes, self.num_classes, smoothing_eps)?)
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().flat_map(|&i| self.image(i).iter().copied()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_size: self.image_size,
            num_classes: self.num_classes,
        }
    }

    /// Stratified split: the last `val_fraction` of each class (in a seeded
    /// shuffle) goes to validation.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<SplitDataset> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let n_val = (idx.len() as f64 * val_fraction).round() as usize;
            let cut = idx.len() - n_val;
            train.extend_from_slice(&idx[..cut]);
            val.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok(SplitDataset { train: self.subset(&train), val: self.subset(&val) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
}

fn d_val() -> f64 {
    0.2
}
fn d_noise() -> f64 {
    0.35
}

/// Class-conditional Gaussian-blob images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total examples across both splits.
    pub n: usize,
    pub image_size: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_val")]
    pub val_fraction: f64,
    /// Standard deviation of per-pixel noise.
    #[serde(default = "d_noise")]
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(n: usize, image_size: usize, num_classes: usize, seed: u64) -> Self {
        Self { n, image_size, num_classes, seed, val_fraction: d_val(), noise: d_noise() }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    color: [f64; CHANNELS],
}

const BLOBS_PER_CLASS: usize = 3;

/// Deterministic stand-in for a natural-image dataset. Classes are equally
/// sized (the remainder of `n / K` goes to the lowest class indices).
pub fn synth_dataset(spec: &SynthSpec) -> Result<SplitDataset> {
    let (n, s, k) = (spec.n, spec.image_size, spec.num_classes);
    if n == 0 || s == 0 || k == 0 {
        return Err(Error::Config("synthetic dataset needs positive n, image_size and num_classes".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let size = s as f64;
    let prototypes: Vec<Vec<Blob>> = (0..k)
        .map(|_| {
            (0..BLOBS_PER_CLASS)
                .map(|_| {
                    let mut color = [0.0; CHANNELS];
                    color.iter_mut().for_each(|c| *c = unit.sample(&mut rng));
                    let norm = color.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-6);
                    color.iter_mut().for_each(|c| *c *= 1.5 / norm);
                    Blob {
                        cy: rng.random_range(0.2..0.8) * size,
                        cx: rng.random_range(0.2..0.8) * size,
                        sigma: rng.random_range(0.08..0.2) * size,
                        color,
                    }
                })
                .collect()
        })
        .collect();

    let per = CHANNELS * s * s;
    let mut images = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    let jitter = 0.05 * size;
    for i in 0..n {
        let class = i % k;
        labels.push(class);
        let mut img = vec![0.0f64; per];
        for blob in &prototypes[class] {
            let cy = blob.cy + jitter * unit.sample(&mut rng);
            let cx = blob.cx + jitter * unit.sample(&mut rng);
            let amp = rng.random_range(0.7..1.3);
            let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
            for y in 0..s {
                for x in 0..s {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let g = amp * (-(dy * dy + dx * dx) * inv).exp();
                    for (c, col) in blob.color.iter().enumerate() {
                        img[c * s * s + y * s + x] += g * col;
                    }
                }
            }
        }
        images.extend(img.into_iter().map(|v| (v + spec.noise * unit.sample(&mut rng)) as f32));
    }
    Dataset::new(images, labels, s, k)?.split(spec.val_fraction, spec.seed ^ 0x5eed)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Reads `root/<class>/<image>` into a split dataset. Class indices follow the
/// sorted subdirectory names; images are resized to `image_size` square and
/// scaled to `[-1, 1]`. Files the image decoder does not recognize are skipped.
pub fn load_image_dir(root: &Path, image_size: usize, val_fraction: f64, seed: u64) -> Result<(SplitDataset, Vec<String>)> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Input(format!("{} has no class subdirectories", root.display())));
    }
    let names = class_dirs.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    let sz = image_size as u32;
    for (class, dir) in class_dirs.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            if image::ImageFormat::from_path(&file).is_err() {
                continue;
            }
            let rgb = image::open(&file)?.to_rgb8();
            let rgb = image::imageops::resize(&rgb, sz, sz, image::imageops::FilterType::Triangle);
            for c in 0..CHANNELS {
                images.extend(rgb.pixels().map(|p| p.0[c] as f32 / 127.5 - 1.0));
            }
            labels.push(class);
        }
    }
    if labels.is_empty() {
        return Err(Error::Input(format!("no readable images under {}", root.display())));
    }
    let k = class_dirs.len();
    Ok((Dataset::new(images, labels, image_size, k)?.split(val_fraction, seed)?, names))
}

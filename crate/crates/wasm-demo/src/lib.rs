//! Browser bindings for three interactive views: model complexity, the
//! learning-rate schedule, and sweep error distributions.
//!
//! Every export returns JSON text (or a plain float array) so the page can
//! stay framework-free; errors come back as strings.

use serde::Serialize;
use vitstem::complexity::{analyze, ComplexityReport};
use vitstem::models::{canonical_config, canonical_names, scaled_config, ScaleSpec};
use vitstem::optim::{lr_at, OptimConfig, OptimizerKind};
use vitstem::stability::{compute_edf, sample_lr_wd, SweepSpec};
use wasm_bindgen::prelude::*;

type Out<T> = Result<T, String>;

fn text<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct GroupRow {
    group: String,
    flops: u64,
    params: u64,
    acts: u64,
}

#[derive(Serialize)]
struct Complexity {
    name: String,
    hidden_size: usize,
    blocks: usize,
    heads: usize,
    tokens: usize,
    flops: u64,
    params: u64,
    acts: u64,
    groups: Vec<GroupRow>,
}

fn summarize(report: ComplexityReport, cfg: &vitstem::models::ModelConfig) -> Complexity {
    let mut groups: Vec<GroupRow> = Vec::new();
    for layer in &report.breakdown {
        // fold the per-block rows into one "blocks" row to keep the table short
        let key = if layer.group.starts_with("block") { "blocks" } else { layer.group.as_str() };
        match groups.iter_mut().find(|g| g.group == key) {
            Some(g) => {
                g.flops += layer.flops;
                g.params += layer.params;
                g.acts += layer.acts;
            }
            None => groups.push(GroupRow { group: key.into(), flops: layer.flops, params: layer.params, acts: layer.acts }),
        }
    }
    Complexity {
        name: report.name,
        hidden_size: cfg.encoder.hidden_size,
        blocks: cfg.encoder.num_blocks,
        heads: cfg.encoder.num_heads,
        tokens: cfg.encoder.tokens(),
        flops: report.flops,
        params: report.params,
        acts: report.acts,
        groups,
    }
}

/// Canonical model names, newline separated.
#[wasm_bindgen]
pub fn model_names() -> String {
    canonical_names().join("\n")
}

/// Complexity of a canonical model, optionally shrunk. A `width_factor` and
/// `depth_factor` of 1 with the native image and patch size is the model
/// itself; `heads` of 0 keeps the base head count.
#[wasm_bindgen]
pub fn complexity(
    name: &str,
    image_size: usize,
    patch_size: usize,
    width_factor: f64,
    depth_factor: f64,
    heads: usize,
) -> Out<String> {
    let base = canonical_config(name).map_err(text)?;
    let native = image_size == base.encoder.image_size
        && patch_size == base.encoder.patch_size
        && width_factor == 1.0
        && depth_factor == 1.0
        && heads == 0;
    let cfg = if native {
        base
    } else {
        let mut spec = ScaleSpec::new(image_size, patch_size, width_factor, depth_factor);
        if heads > 0 {
            spec = spec.heads(heads);
        }
        scaled_config(&base, &spec).map_err(text)?
    };
    let report = analyze(&cfg).map_err(text)?;
    serde_json::to_string(&summarize(report, &cfg)).map_err(text)
}

/// Learning rate at `points` evenly spaced fractional epochs in [0, total].
#[wasm_bindgen]
pub fn lr_curve(lr: f64, minibatch: usize, warmup: f64, total: f64, points: usize) -> Out<Vec<f64>> {
    let mut cfg = OptimConfig::new(OptimizerKind::Adamw, lr, 0.0, total, minibatch);
    cfg.warmup_epochs = warmup;
    cfg.validate().map_err(text)?;
    let n = points.max(2);
    (0..n)
        .map(|i| lr_at(&cfg, total * i as f64 / (n - 1) as f64).map_err(text))
        .collect()
}

/// Error distribution of pasted top-1 errors (any whitespace or comma
/// separated list), as `{deltas, cum_fracs}`.
#[wasm_bindgen]
pub fn edf(errors: &str) -> Out<String> {
    let values: Vec<f64> = errors
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Out<_>>()?;
    serde_json::to_string(&compute_edf(&values).map_err(text)?).map_err(text)
}

/// Log-uniform (lr, wd) draws around a center, flattened as
/// `[lr0, wd0, lr1, wd1, ...]`.
#[wasm_bindgen]
pub fn sample_sweep(center_lr: f64, center_wd: f64, low: f64, high: f64, n: usize, seed: u64) -> Out<Vec<f64>> {
    let mut spec = SweepSpec::new(center_lr, center_wd, seed);
    spec.low_factor = low;
    spec.high_factor = high;
    spec.n_samples = n;
    let draws = sample_lr_wd(&spec).map_err(text)?;
    Ok(draws.into_iter().flat_map(|(l, w)| [l, w]).collect())
}

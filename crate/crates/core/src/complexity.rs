//! Static complexity accounting.
//!
//! Conventions: one multiply-accumulate is one flop; activations count the
//! output scalars of every convolution and matrix multiplication, including
//! the attention-score and attention-value products; norms, softmax, GELU,
//! bias and embedding additions add zero flops and zero activations, though
//! their parameters are counted. All counts are for one image.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, StemNorm, StemSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Coarse owner: `stem`, `embed`, `block.{i}` or `head`.
    pub group: String,
    pub name: String,
    pub flops: u64,
    pub params: u64,
    pub acts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub name: String,
    pub flops: u64,
    pub params: u64,
    pub acts: u64,
    pub breakdown: Vec<LayerRecord>,
}

impl ComplexityReport {
    fn from_records(name: &str, breakdown: Vec<LayerRecord>) -> Self {
        Self {
            name: name.to_string(),
            flops: breakdown.iter().map(|r| r.flops).sum(),
            params: breakdown.iter().map(|r| r.params).sum(),
            acts: breakdown.iter().map(|r| r.acts).sum(),
            breakdown,
        }
    }

    /// (flops, params, acts) summed over one group.
    pub fn group_totals(&self, group: &str) -> (u64, u64, u64) {
        self.breakdown
            .iter()
            .filter(|r| r.group == group)
            .fold((0, 0, 0), |(f, p, a), r| (f + r.flops, p + r.params, a + r.acts))
    }

    pub fn flops_b(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn params_m(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn acts_m(&self) -> f64 {
        self.acts as f64 / 1e6
    }
}

struct Recorder {
    records: Vec<LayerRecord>,
}

impl Recorder {
    fn add(&mut self, group: &str, name: String, flops: usize, params: usize, acts: usize) {
        self.records.push(LayerRecord {
            group: group.to_string(),
            name,
            flops: flops as u64,
            params: params as u64,
            acts: acts as u64,
        });
    }
}

fn record_stem(rec: &mut Recorder, stem: &StemSpec, image_size: usize) -> Result<()> {
    for (i, l) in stem.layers(image_size)?.iter().enumerate() {
        let out = l.output_size * l.output_size * l.out_channels;
        let taps = l.in_channels * l.kernel * l.kernel;
        let bias = if l.has_bias { l.out_channels } else { 0 };
        rec.add("stem", format!("stem.{i}.conv"), out * taps, taps * l.out_channels + bias, out);
        if l.norm != StemNorm::None {
            rec.add("stem", format!("stem.{i}.norm"), 0, 2 * l.out_channels, 0);
        }
    }
    Ok(())
}

/// Counts for a stem alone on a square `image_size` input.
pub fn analyze_stem(name: &str, stem: &StemSpec, image_size: usize) -> Result<ComplexityReport> {
    let mut rec = Recorder { records: Vec::new() };
    record_stem(&mut rec, stem, image_size)?;
    Ok(ComplexityReport::from_records(name, rec.records))
}

/// Counts for a full model, derived from the config alone.
pub fn analyze(config: &ModelConfig) -> Result<ComplexityReport> {
    config.validate()?;
    let e = &config.encoder;
    let (d, n, heads, hidden, k) = (e.hidden_size, e.tokens(), e.num_heads, e.mlp_hidden(), e.num_classes);
    let mut rec = Recorder { records: Vec::new() };
    record_stem(&mut rec, &config.stem, e.image_size)?;
    rec.add("embed", "cls_token".into(), 0, d, 0);
    rec.add("embed", "pos_embed".into(), 0, n * d, 0);
    for b in 0..e.num_blocks {
        let g = format!("block.{b}");
        let name = |s: &str| format!("blocks.{b}.{s}");
        rec.add(&g, name("ln1"), 0, 2 * d, 0);
        rec.add(&g, name("attn.qkv"), n * d * 3 * d, 3 * d * d + 3 * d, n * 3 * d);
        rec.add(&g, name("attn.scores"), n * n * d, 0, heads * n * n);
        rec.add(&g, name("attn.values"), n * n * d, 0, n * d);
        rec.add(&g, name("attn.proj"), n * d * d, d * d + d, n * d);
        rec.add(&g, name("ln2"), 0, 2 * d, 0);
        rec.add(&g, name("mlp.fc1"), n * d * hidden, d * hidden + hidden, n * hidden);
        rec.add(&g, name("mlp.fc2"), n * hidden * d, hidden * d + d, n * d);
    }
    rec.add("head", "head.ln".into(), 0, 2 * d, 0);
    rec.add("head", "head.fc".into(), d * k, d * k + k, k);
    Ok(ComplexityReport::from_records(&config.name, rec.records))
}

pub const CSV_HEADER: [&str; 4] = ["name", "flops_B", "params_M", "acts_M"];

/// One CSV row per report: name, flops (B), params (M), acts (M).
pub fn write_csv<W: Write>(out: W, reports: &[ComplexityReport]) -> Result<()> {
    let mut w = crate::csv_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            format!("{:.4}", r.flops_b()),
            format!("{:.4}", r.params_m()),
            format!("{:.4}", r.acts_m()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(xs: &[f64], ys: &[f64]) -> Result<Moments> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Input("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite sample".into()));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Ok(Moments { mean_x, mean_y, sxx, syy, sxy })
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let m = moments(xs, ys)?;
    if m.sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("xs have zero variance"));
    }
    if m.syy == 0.0 {
        return Err(Error::UndefinedCorrelation("ys have zero variance"));
    }
    Ok((m.sxy / (m.sxx.sqrt() * m.syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let m = moments(xs, ys)?;
    if m.sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("xs have zero variance"));
    }
    let slope = m.sxy / m.sxx;
    Ok((slope, m.mean_y - slope * m.mean_x))
}

pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    let r = pearson(xs, ys)?;
    let (slope, intercept) = linear_fit(xs, ys)?;
    Ok(CorrelationReport { r, slope, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{canonical_config, canonical_stem};

    #[test]
    fn patchify_stem_closed_form() {
        let r = analyze_stem("P", &canonical_stem("P").unwrap(), 224).unwrap();
        assert_eq!(r.flops, 57_802_752);
        assert_eq!(r.params, 295_296);
        assert_eq!(r.acts, 75_264);
    }

    #[test]
    fn per_block_acts_closed_form() {
        let r = analyze(&canonical_config("ViT_P-4GF").unwrap()).unwrap();
        assert_eq!(r.group_totals("block.0").2, 913_686);
    }

    #[test]
    fn removing_a_block_removes_its_flops() {
        let mut cfg = canonical_config("ViT_P-4GF").unwrap();
        let full = analyze(&cfg).unwrap();
        cfg.encoder.num_blocks -= 1;
        let less = analyze(&cfg).unwrap();
        assert_eq!(full.flops - less.flops, full.group_totals("block.11").0);
    }

    #[test]
    fn breakdown_sums_to_totals() {
        let r = analyze(&canonical_config("ViT_C-18GF").unwrap()).unwrap();
        let (f, p, a) = r.breakdown.iter().fold((0, 0, 0), |(f, p, a), l| (f + l.flops, p + l.params, a + l.acts));
        assert_eq!((f, p, a), (r.flops, r.params, r.acts));
    }

    #[test]
    fn pearson_signs() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let err = pearson(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::UndefinedCorrelation(_)));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn csv_header_and_row() {
        let r = analyze(&canonical_config("ViT_C-4GF").unwrap()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "name,flops_B,params_M,acts_M");
        assert!(lines[1].starts_with("ViT_C-4GF,3.9"), "{}", lines[1]);
        assert_eq!(lines.len(), 2);
        assert!(!text.contains('\r'));
    }
}

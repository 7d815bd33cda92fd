//! Optimizability metrics: error distribution functions over hyperparameter
//! sweeps, gaps to the longest schedule, and AdamW-vs-SGD gaps.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// Workers that wall time is normalized to.
pub const REFERENCE_WORKERS: usize = 8;

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub model_name: String,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub wd: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Percent; taken from the EMA weights when `used_ema` is set.
    pub final_top1_err: f64,
    pub best_top1_err: f64,
    pub raw_top1_err: f64,
    pub ema_top1_err: f64,
    pub used_ema: bool,
    pub ema_decay: f64,
    pub diverged: bool,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub wall_time_seconds: f64,
    pub workers: usize,
    pub normalized_epoch_minutes: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [
            ("final_top1_err", self.final_top1_err),
            ("best_top1_err", self.best_top1_err),
            ("raw_top1_err", self.raw_top1_err),
            ("ema_top1_err", self.ema_top1_err),
        ] {
            if !(0.0..=100.0).contains(&e) {
                return Err(Error::Input(format!("{name} = {e} outside [0, 100]")));
            }
        }
        if !(self.wall_time_seconds > 0.0) {
            return Err(Error::Input(format!("wall_time_seconds must be positive, got {}", self.wall_time_seconds)));
        }
        Ok(())
    }
}

/// Log-uniform box around a center: `[center·low, center·high]` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub center_lr: f64,
    pub center_wd: f64,
    #[serde(default = "d_low")]
    pub low_factor: f64,
    #[serde(default = "d_high")]
    pub high_factor: f64,
    #[serde(default = "d_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_low() -> f64 {
    1.0 / 8.0
}
fn d_high() -> f64 {
    4.0
}
fn d_samples() -> usize {
    64
}

impl SweepSpec {
    pub fn new(center_lr: f64, center_wd: f64, seed: u64) -> Self {
        Self { center_lr, center_wd, low_factor: d_low(), high_factor: d_high(), n_samples: d_samples(), seed }
    }

    /// A sweep covering `lr_range × wd_range` exactly, with the center placed
    /// at the default low factor.
    pub fn from_ranges(lr_range: (f64, f64), wd_range: (f64, f64), seed: u64) -> Result<Self> {
        let (lr_lo, lr_hi) = lr_range;
        let (wd_lo, wd_hi) = wd_range;
        if !(lr_lo > 0.0 && lr_lo <= lr_hi && wd_lo > 0.0 && wd_lo <= wd_hi) {
            return Err(Error::Config(format!("invalid ranges lr {lr_range:?}, wd {wd_range:?}")));
        }
        // One factor pair serves both axes only when the ratios agree; the wider
        // ratio wins and the narrower axis is clipped by `interval`.
        let ratio = (lr_hi / lr_lo).max(wd_hi / wd_lo);
        let low = d_low();
        Ok(Self {
            center_lr: lr_lo / low,
            center_wd: wd_lo / low,
            low_factor: low,
            high_factor: low * ratio,
            n_samples: d_samples(),
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low_factor > 0.0 && self.low_factor <= 1.0 && self.high_factor >= 1.0 && self.high_factor.is_finite()) {
            return Err(Error::Config(format!(
                "sweep factors must satisfy 0 < low ({}) <= 1 <= high ({})",
                self.low_factor, self.high_factor
            )));
        }
        if !(self.center_lr > 0.0 && self.center_lr.is_finite() && self.center_wd > 0.0 && self.center_wd.is_finite()) {
            return Err(Error::Config(format!("sweep centers must be positive, got lr {} wd {}", self.center_lr, self.center_wd)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_interval(&self) -> (f64, f64) {
        (self.center_lr * self.low_factor, self.center_lr * self.high_factor)
    }

    pub fn wd_interval(&self) -> (f64, f64) {
        (self.center_wd * self.low_factor, self.center_wd * self.high_factor)
    }
}

fn log_uniform(center: f64, low: f64, high: f64, rng: &mut impl Rng) -> f64 {
    let (a, b) = (low.ln(), high.ln());
    let u: f64 = rng.random();
    center * (a + u * (b - a)).exp()
}

/// Independent log-uniform draws of `(lr, wd)`.
pub fn sample_lr_wd(spec: &SweepSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_samples)
        .map(|_| {
            let lr = log_uniform(spec.center_lr, spec.low_factor, spec.high_factor, &mut rng);
            let wd = log_uniform(spec.center_wd, spec.low_factor, spec.high_factor, &mut rng);
            (lr, wd)
        })
        .collect())
}

/// Error distribution function: the fraction of runs within each delta of
/// the best run. Tied errors collapse into a single step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edf {
    pub deltas: Vec<f64>,
    pub cum_fracs: Vec<f64>,
}

impl Edf {
    /// Fraction of runs whose delta is at most `delta`.
    pub fn at(&self, delta: f64) -> f64 {
        match self.deltas.iter().rposition(|&d| d <= delta) {
            Some(i) => self.cum_fracs[i],
            None => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::csv_writer(out);
        w.write_record(["delta", "cum_frac"])?;
        for (d, f) in self.deltas.iter().zip(&self.cum_fracs) {
            w.write_record([d.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn compute_edf(errors: &[f64]) -> Result<Edf> {
    if errors.is_empty() {
        return Err(Error::Input("EDF of an empty set".into()));
    }
    if let Some(e) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::Input(format!("non-finite error {e}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (best, n) = (sorted[0], sorted.len() as f64);
    let (mut deltas, mut cum_fracs) = (Vec::new(), Vec::new());
    for (k, &e) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        let delta = e - best;
        if deltas.last() == Some(&delta) {
            *cum_fracs.last_mut().unwrap() = frac;
        } else {
            deltas.push(delta);
            cum_fracs.push(frac);
        }
    }
    Ok(Edf { deltas, cum_fracs })
}

/// Best (lowest) error per key among runs that did not diverge, plus the
/// keys whose runs all diverged.
fn best_by<K: Ord + Clone>(records: &[RunRecord], key: impl Fn(&RunRecord) -> K) -> (BTreeMap<K, f64>, BTreeMap<K, ()>) {
    let (mut best, mut diverged) = (BTreeMap::new(), BTreeMap::new());
    for r in records {
        let k = key(r);
        if r.diverged {
            diverged.insert(k, ());
        } else {
            best.entry(k).and_modify(|e: &mut f64| *e = e.min(r.final_top1_err)).or_insert(r.final_top1_err);
        }
    }
    diverged.retain(|k, _| !best.contains_key(k));
    (best, diverged)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDelta {
    pub model: String,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub top1_err: f64,
    pub delta: f64,
}

/// `err(model, e) − err(model, asymptotic_epochs)` for each model, optimizer
/// and schedule length, using the best non-diverged run of each group.
pub fn delta_to_asymptotic(records: &[RunRecord], asymptotic_epochs: usize) -> Result<Vec<AsymptoticDelta>> {
    let (best, _) = best_by(records, |r| (r.model_name.clone(), r.optimizer, r.epochs));
    let mut out = Vec::new();
    for ((model, opt, epochs), &err) in &best {
        let Some(&asym) = best.get(&(model.clone(), *opt, asymptotic_epochs)) else {
            return Err(Error::Aggregation(format!(
                "model {model} ({opt}) has no completed {asymptotic_epochs}-epoch run"
            )));
        };
        out.push(AsymptoticDelta { model: model.clone(), optimizer: *opt, epochs: *epochs, top1_err: err, delta: err - asym });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerGap {
    pub model: String,
    pub epochs: usize,
    pub adamw_err: f64,
    pub sgd_err: f64,
    /// `sgd_err − adamw_err`.
    pub gap: f64,
    pub adamw_fallback: bool,
    pub sgd_fallback: bool,
}

/// AdamW-vs-SGD error gap for each model and schedule where both optimizers
/// have results. A schedule whose runs all diverged borrows the best result
/// of the longest shorter schedule and is flagged as a fallback.
pub fn optimizer_gap(records: &[RunRecord]) -> Result<Vec<OptimizerGap>> {
    let (best, diverged) = best_by(records, |r| (r.model_name.clone(), r.optimizer, r.epochs));
    let lookup = |model: &str, opt: OptimizerKind, epochs: usize| -> Option<(f64, bool)> {
        let key = (model.to_string(), opt, epochs);
        if let Some(&e) = best.get(&key) {
            return Some((e, false));
        }
        if !diverged.contains_key(&key) {
            return None;
        }
        best.range((model.to_string(), opt, 0)..key).next_back().map(|(_, &e)| (e, true))
    };
    let mut keys: Vec<(String, usize)> = best.keys().chain(diverged.keys()).map(|(m, _, e)| (m.clone(), *e)).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (model, epochs) in keys {
        let a = lookup(&model, OptimizerKind::Adamw, epochs);
        let s = lookup(&model, OptimizerKind::Sgd, epochs);
        if let (Some((adamw_err, adamw_fallback)), Some((sgd_err, sgd_fallback))) = (a, s) {
            out.push(OptimizerGap { model, epochs, adamw_err, sgd_err, gap: sgd_err - adamw_err, adamw_fallback, sgd_fallback });
        }
    }
    Ok(out)
}

/// Minutes per epoch rescaled to [`REFERENCE_WORKERS`] workers.
pub fn normalized_epoch_minutes(wall_seconds: f64, n_workers: usize, reference_workers: usize, epochs: f64) -> Result<f64> {
    if !(epochs > 0.0) || reference_workers == 0 {
        return Err(Error::Input(format!("cannot normalize over {epochs} epochs and {reference_workers} reference workers")));
    }
    Ok(wall_seconds / 60.0 * n_workers as f64 / reference_workers as f64 / epochs)
}

pub fn write_deltas_csv<W: Write>(out: W, rows: &[AsymptoticDelta]) -> Result<()> {
    let mut w = crate::csv_writer(out);
    w.write_record(["model", "optimizer", "epochs", "top1_err", "delta"])?;
    for r in rows {
        w.write_record([r.model.clone(), r.optimizer.to_string(), r.epochs.to_string(), r.top1_err.to_string(), r.delta.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_gaps_csv<W: Write>(out: W, rows: &[OptimizerGap]) -> Result<()> {
    let mut w = crate::csv_writer(out);
    w.write_record(["model", "epochs", "adamw_err", "sgd_err", "gap", "adamw_fallback", "sgd_fallback"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.epochs.to_string(),
            r.adamw_err.to_string(),
            r.sgd_err.to_string(),
            r.gap.to_string(),
            r.adamw_fallback.to_string(),
            r.sgd_fallback.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Where sweep centers come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    /// Tuned optimum of the specific model.
    PerModel,
    /// Interval shared by the whole model family.
    Family,
}

/// Reference optimum, with `lr` normalized to a minibatch of 2048.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceCenter {
    pub model: &'static str,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub wd: f64,
}

pub const REFERENCE_CENTERS: [ReferenceCenter; 12] = {
    use OptimizerKind::{Adamw, Sgd};
    const fn c(model: &'static str, optimizer: OptimizerKind, lr: f64, wd: f64) -> ReferenceCenter {
        ReferenceCenter { model, optimizer, lr, wd }
    }
    [
        c("ViT_P-1GF", Adamw, 2.0e-3, 0.20),
        c("ViT_P-4GF", Adamw, 2.0e-3, 0.20),
        c("ViT_P-18GF", Adamw, 1.0e-3, 0.24),
        c("ViT_C-1GF", Adamw, 2.5e-3, 0.19),
        c("ViT_C-4GF", Adamw, 1.0e-3, 0.24),
        c("ViT_C-18GF", Adamw, 1.0e-3, 0.24),
        c("ViT_P-1GF", Sgd, 1.9, 1.3e-5),
        c("ViT_P-4GF", Sgd, 1.9, 1.3e-5),
        c("ViT_P-18GF", Sgd, 1.1, 1.2e-5),
        c("ViT_C-1GF", Sgd, 1.9, 1.3e-5),
        c("ViT_C-4GF", Sgd, 1.3, 2.2e-5),
        c("ViT_C-18GF", Sgd, 1.1, 2.7e-5),
    ]
};

/// Family-level `(lr, wd)` sweep ranges for vision transformers.
pub fn family_ranges(optimizer: OptimizerKind) -> ((f64, f64), (f64, f64)) {
    match optimizer {
        OptimizerKind::Adamw => ((2.5e-4, 8.0e-3), (0.02, 0.8)),
        OptimizerKind::Sgd => ((0.1, 3.2), (4.0e-6, 1.2e-4)),
    }
}

/// Sweep spec around a reference center. Scaled model names resolve through
/// their base name (the part before `@`).
pub fn reference_sweep(model: &str, optimizer: OptimizerKind, source: CenterSource, seed: u64) -> Result<SweepSpec> {
    match source {
        CenterSource::Family => {
            let (lr, wd) = family_ranges(optimizer);
            SweepSpec::from_ranges(lr, wd, seed)
        }
        CenterSource::PerModel => {
            let base = model.split('@').next().unwrap_or(model);
            REFERENCE_CENTERS
                .iter()
                .find(|c| c.model == base && c.optimizer == optimizer)
                .map(|c| SweepSpec::new(c.lr, c.wd, seed))
                .ok_or_else(|| Error::UnknownModel {
                    name: base.to_string(),
                    valid: REFERENCE_CENTERS.iter().filter(|c| c.optimizer == optimizer).map(|c| c.model.to_string()).collect(),
                })
        }
    }
}

/// One-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Input("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p = if lambda < 1e-3 {
        1.0
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let j = j as f64;
                2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp()
            })
            .sum();
        s.clamp(0.0, 1.0)
    };
    Ok((d, p))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn rec(model: &str, opt: OptimizerKind, epochs: usize, err: f64, diverged: bool) -> RunRecord {
        RunRecord {
            id: format!("{model}-{opt}-{epochs}-{err}"),
            model_name: model.into(),
            optimizer: opt,
            lr: 1e-3,
            wd: 0.1,
            epochs,
            seed: 0,
            final_top1_err: err,
            best_top1_err: err,
            raw_top1_err: err,
            ema_top1_err: err,
            used_ema: false,
            ema_decay: 0.9998,
            diverged,
            initial_train_loss: None,
            final_train_loss: None,
            wall_time_seconds: 1.0,
            workers: 1,
            normalized_epoch_minutes: 1.0,
        }
    }

    #[test]
    fn edf_examples() {
        let e = compute_edf(&[5.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.deltas, vec![0.0, 1.0, 2.0]);
        assert_eq!(e.cum_fracs, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(compute_edf(&[2.5; 4]).unwrap(), Edf { deltas: vec![0.0], cum_fracs: vec![1.0] });
        assert_eq!(compute_edf(&[7.0]).unwrap(), Edf { deltas: vec![0.0], cum_fracs: vec![1.0] });
        assert!(compute_edf(&[]).is_err());
        assert_eq!(e.at(1.5), 2.0 / 3.0);
        assert_eq!(e.at(-1.0), 0.0);
    }

    #[test]
    fn sweep_intervals() {
        let s = SweepSpec::new(2.0e-3, 0.2, 0);
        let (lo, hi) = s.lr_interval();
        assert!((lo - 2.5e-4).abs() < 1e-15 && (hi - 8.0e-3).abs() < 1e-15);
        let (lo, hi) = s.wd_interval();
        assert!((lo - 0.025).abs() < 1e-15 && (hi - 0.8).abs() < 1e-15);
        let f = SweepSpec::from_ranges((2.5e-4, 8.0e-3), (0.02, 0.8), 0).unwrap();
        assert!((f.center_wd - 0.16).abs() < 1e-15);
        let mut fixed = SweepSpec::new(3e-3, 0.05, 9);
        fixed.low_factor = 1.0;
        fixed.high_factor = 1.0;
        assert!(sample_lr_wd(&fixed).unwrap().iter().all(|&p| p == (3e-3, 0.05)));
        let draws = sample_lr_wd(&s).unwrap();
        assert_eq!(draws.len(), 64);
        assert_eq!(draws, sample_lr_wd(&s).unwrap());
        assert!(draws.iter().all(|&(lr, wd)| (2.5e-4..=8.0e-3).contains(&lr) && (0.025..=0.8).contains(&wd)));
        let mut bad = s.clone();
        bad.low_factor = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn asymptotic_deltas() {
        use OptimizerKind::Adamw;
        let rs = [rec("m", Adamw, 50, 30.0, false), rec("m", Adamw, 400, 20.0, false), rec("m", Adamw, 400, 25.0, false)];
        let d = delta_to_asymptotic(&rs, 400).unwrap();
        assert_eq!(d.iter().map(|x| (x.epochs, x.delta)).collect::<Vec<_>>(), vec![(50, 10.0), (400, 0.0)]);
        let err = delta_to_asymptotic(&rs[..1], 400).unwrap_err().to_string();
        assert!(err.contains('m'), "{err}");
    }

    #[test]
    fn gaps_with_fallback() {
        use OptimizerKind::{Adamw, Sgd};
        let rs = [
            rec("m", Adamw, 200, 20.0, false),
            rec("m", Sgd, 200, 30.0, false),
            rec("m", Adamw, 400, 19.0, false),
            rec("m", Sgd, 100, 35.0, false),
            rec("m", Sgd, 200, 31.0, false),
            rec("m", Sgd, 400, 100.0, true),
        ];
        let g = optimizer_gap(&rs).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].epochs, g[0].gap, g[0].sgd_fallback), (200, 10.0, false));
        assert_eq!((g[1].epochs, g[1].sgd_err, g[1].sgd_fallback), (400, 30.0, true));
        let same = optimizer_gap(&[rec("x", Adamw, 1, 5.0, false), rec("x", Sgd, 1, 5.0, false)]).unwrap();
        assert_eq!(same[0].gap, 0.0);
    }

    #[test]
    fn timing() {
        assert_eq!(normalized_epoch_minutes(60.0, 8, 8, 1.0).unwrap(), 1.0);
        assert_eq!(normalized_epoch_minutes(480.0, 8, 8, 1.0).unwrap(), 8.0);
        assert_eq!(normalized_epoch_minutes(480.0, 16, 8, 1.0).unwrap(), 16.0);
        assert_eq!(normalized_epoch_minutes(480.0, 8, 8, 4.0).unwrap(), 2.0);
        assert!(normalized_epoch_minutes(480.0, 8, 8, 0.0).is_err());
    }

    #[test]
    fn reference_centers() {
        let s = reference_sweep("ViT_C-1GF@32px/p4/d64/L2", OptimizerKind::Adamw, CenterSource::PerModel, 0).unwrap();
        assert_eq!((s.center_lr, s.center_wd), (2.5e-3, 0.19));
        assert!(reference_sweep("S1@4GF", OptimizerKind::Sgd, CenterSource::PerModel, 0).is_err());
        let f = reference_sweep("anything", OptimizerKind::Sgd, CenterSource::Family, 0).unwrap();
        let (lo, hi) = f.lr_interval();
        assert!((lo - 0.1).abs() < 1e-12 && (hi - 3.2).abs() < 1e-12);
    }

    #[test]
    fn ks_detects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let (_, p) = ks_test(&u, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(p > 0.01);
        let (_, p) = ks_test(&u, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(p < 1e-6);
    }
}

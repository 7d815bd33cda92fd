//! SGD with momentum, AdamW with decoupled weight decay, the warmup + cosine
//! schedule, and weight EMA.
//!
//! Weight decay never touches norm gains or biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, Param, ParamClass};
use crate::tensor::{Element, Tensor};

/// Learning rates are quoted for this minibatch size and scaled linearly.
pub const REFERENCE_MINIBATCH: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adamw => "adamw",
        })
    }
}

fn d_momentum() -> f64 {
    0.9
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_warmup() -> f64 {
    5.0
}
fn d_ema() -> f64 {
    0.9998
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    /// Normalized to a minibatch of [`REFERENCE_MINIBATCH`].
    pub lr: f64,
    pub wd: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: f64,
    /// Left at zero in experiment files, where the run length fills it in.
    #[serde(default)]
    pub total_epochs: f64,
    pub minibatch_size: usize,
    /// Per-step EMA decay of the model weights.
    #[serde(default = "d_ema")]
    pub ema_decay: f64,
}

impl OptimConfig {
    pub fn new(optimizer: OptimizerKind, lr: f64, wd: f64, total_epochs: f64, minibatch_size: usize) -> Self {
        Self {
            optimizer,
            lr,
            wd,
            momentum: d_momentum(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            warmup_epochs: d_warmup(),
            total_epochs,
            minibatch_size,
            ema_decay: d_ema(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if !(self.wd.is_finite() && self.wd >= 0.0) {
            return bad(format!("wd must be non-negative and finite, got {}", self.wd));
        }
        if !(self.total_epochs > 0.0 && self.total_epochs.is_finite()) {
            return bad(format!("total_epochs must be positive, got {}", self.total_epochs));
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs < self.total_epochs) {
            return bad(format!(
                "warmup_epochs ({}) must be in [0, total_epochs = {})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        for (name, v) in [("momentum", self.momentum), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }

    /// Peak learning rate after minibatch scaling.
    pub fn base_lr(&self) -> f64 {
        self.lr * self.minibatch_size as f64 / REFERENCE_MINIBATCH as f64
    }
}

/// Linear warmup to the scaled base rate, then a half-period cosine to zero,
/// at fractional-epoch resolution.
pub fn lr_at(cfg: &OptimConfig, t: f64) -> Result<f64> {
    let (w, total) = (cfg.warmup_epochs, cfg.total_epochs);
    if !(0.0..=total).contains(&t) {
        return Err(Error::Input(format!("epoch {t} outside schedule [0, {total}]")));
    }
    let base = cfg.base_lr();
    if t < w {
        return Ok(base * t / w);
    }
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * (t - w) / (total - w)).cos()))
}

/// `true` where weight decay applies: weights only.
pub fn decay_mask(model: &Model) -> Vec<bool> {
    model.params().iter().map(|p| p.class == ParamClass::Weight).collect()
}

/// `g ← g + wd·θ` (decayed only), `v ← μ·v + g`, `θ ← θ − lr·v`.
pub fn sgd_step<T: Element>(theta: &mut [T], grad: &[T], velocity: &mut [T], lr: f64, wd: f64, momentum: f64, decay: bool) {
    let wd = if decay { wd } else { 0.0 };
    for ((p, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let (pf, gf) = (p.to_f64_lossy(), g.to_f64_lossy());
        let vf = momentum * v.to_f64_lossy() + gf + wd * pf;
        *v = T::from_f64_lossy(vf);
        *p = T::from_f64_lossy(pf - lr * vf);
    }
}

/// Bias-corrected Adam moments with decay decoupled from the adaptive step:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`. `step` starts at 1.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<T: Element>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    decay: bool,
) {
    assert!(step >= 1, "adam step index starts at 1");
    let wd = if decay { wd } else { 0.0 };
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for (((p, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let (pf, gf) = (p.to_f64_lossy(), g.to_f64_lossy());
        let mf = beta1 * mi.to_f64_lossy() + (1.0 - beta1) * gf;
        let vf = beta2 * vi.to_f64_lossy() + (1.0 - beta2) * gf * gf;
        *mi = T::from_f64_lossy(mf);
        *vi = T::from_f64_lossy(vf);
        let (m_hat, v_hat) = (mf / c1, vf / c2);
        *p = T::from_f64_lossy(pf - lr * (m_hat / (v_hat.sqrt() + eps) + wd * pf));
    }
}

/// `e ← decay·e + (1 − decay)·θ`.
pub fn ema_update<T: Element>(ema: &mut [T], theta: &[T], decay: f64) {
    for (e, &p) in ema.iter_mut().zip(theta) {
        *e = T::from_f64_lossy(decay * e.to_f64_lossy() + (1.0 - decay) * p.to_f64_lossy());
    }
}

/// Optimizer state for every parameter of a model.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    mask: Vec<bool>,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, model: &Model) -> Result<Self> {
        cfg.validate()?;
        let zeros = || model.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect::<Vec<_>>();
        let second = if cfg.optimizer == OptimizerKind::Adamw { zeros() } else { Vec::new() };
        Ok(Self {
            mask: decay_mask(model),
            first: zeros(),
            second,
            steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update using each parameter's stored gradient; parameters
    /// without a gradient are left unchanged.
    pub fn step(&mut self, params: &mut [Param], lr: f64) -> Result<()> {
        if params.len() != self.mask.len() {
            return Err(Error::Input(format!(
                "optimizer built for {} parameters, got {}",
                self.mask.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let c = &self.cfg;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.tensor.grad().map(<[f32]>::to_vec) else {
                continue;
            };
            let theta = p.tensor.data_mut();
            match c.optimizer {
                OptimizerKind::Sgd => {
                    sgd_step(theta, &grad, &mut self.first[i], lr, c.wd, c.momentum, self.mask[i])
                }
                OptimizerKind::Adamw => adamw_step(
                    theta,
                    &grad,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.steps,
                    lr,
                    c.wd,
                    c.beta1,
                    c.beta2,
                    c.eps,
                    self.mask[i],
                ),
            }
        }
        Ok(())
    }
}

/// Shadow copy of a model's weights.
#[derive(Clone, Debug)]
pub struct WeightEma {
    decay: f64,
    shadow: Vec<Tensor<f32>>,
}

impl WeightEma {
    pub fn new(model: &Model, decay: f64) -> Self {
        Self {
            decay,
            shadow: model.params().iter().map(|p| Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("shape")).collect(),
        }
    }

    pub fn update(&mut self, model: &Model) {
        for (e, p) in self.shadow.iter_mut().zip(model.params()) {
            ema_update(e.data_mut(), p.tensor.data(), self.decay);
        }
    }

    /// Exchanges the live weights with the averaged ones; calling twice
    /// restores the original state.
    pub fn swap(&mut self, model: &mut Model) {
        for (e, p) in self.shadow.iter_mut().zip(model.params_mut()) {
            e.data_mut().swap_with_slice(p.tensor.data_mut());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> OptimConfig {
        let mut c = OptimConfig::new(OptimizerKind::Adamw, lr, 0.05, 50.0, REFERENCE_MINIBATCH);
        c.warmup_epochs = 5.0;
        c
    }

    #[test]
    fn schedule_points() {
        let c = cfg(1e-3);
        assert_eq!(lr_at(&c, 0.0).unwrap(), 0.0);
        assert!((lr_at(&c, 5.0).unwrap() - 1e-3).abs() < 1e-12);
        assert!((lr_at(&c, 27.5).unwrap() - 5e-4).abs() < 1e-12);
        assert!(lr_at(&c, 50.0).unwrap().abs() < 1e-12);
        assert!(lr_at(&c, 50.1).is_err());
        assert!(lr_at(&c, -0.1).is_err());
    }

    #[test]
    fn minibatch_scaling() {
        let mut c = cfg(2e-3);
        c.minibatch_size = 256;
        assert!((c.base_lr() - 2.5e-4).abs() < 1e-15);
    }

    #[test]
    fn sgd_examples() {
        let (mut theta, mut v) = ([1.0f64], [0.0f64]);
        sgd_step(&mut theta, &[0.5], &mut v, 0.1, 0.0, 0.9, true);
        assert!((v[0] - 0.5).abs() < 1e-12 && (theta[0] - 0.95).abs() < 1e-12);

        let (mut theta, mut v) = ([1.3f64], [0.0f64]);
        sgd_step(&mut theta, &[0.0], &mut v, 0.1, 0.0, 0.9, true);
        assert_eq!((theta[0], v[0]), (1.3, 0.0));

        let (mut a, mut va) = ([2.0f64], [0.1f64]);
        let (mut b, mut vb) = ([2.0f64], [0.1f64]);
        sgd_step(&mut a, &[0.3], &mut va, 0.1, 5.0, 0.9, false);
        sgd_step(&mut b, &[0.3], &mut vb, 0.1, 0.0, 0.9, true);
        assert_eq!((a, va), (b, vb));
    }

    #[test]
    fn adamw_examples() {
        let (mut theta, mut m, mut v) = ([1.0f64], [0.0f64], [0.0f64]);
        adamw_step(&mut theta, &[0.5], &mut m, &mut v, 1, 0.1, 0.1, 0.9, 0.999, 1e-8, true);
        let expect = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.1);
        assert!((theta[0] - expect).abs() < 1e-12);
        assert!((theta[0] - 0.89).abs() < 1e-8);

        let (mut theta, mut m, mut v) = ([2.0f64], [0.0f64], [0.0f64]);
        adamw_step(&mut theta, &[0.0], &mut m, &mut v, 1, 0.1, 0.1, 0.9, 0.999, 1e-8, true);
        assert!((theta[0] - 2.0 * (1.0 - 0.1 * 0.1)).abs() < 1e-12);

        let (mut theta, mut m, mut v) = ([2.0f64], [0.0f64], [0.0f64]);
        adamw_step(&mut theta, &[0.0], &mut m, &mut v, 1, 0.1, 0.1, 0.9, 0.999, 1e-8, false);
        assert_eq!(theta[0], 2.0);
    }

    #[test]
    fn ema_examples() {
        let mut e = [0.3f64];
        ema_update(&mut e, &[1.0], 0.0);
        assert_eq!(e[0], 1.0);
        let mut e = [0.3f64];
        ema_update(&mut e, &[1.0], 1.0);
        assert_eq!(e[0], 0.3);
        let mut e = [0.0f64];
        ema_update(&mut e, &[1.0], 0.9);
        ema_update(&mut e, &[1.0], 0.9);
        assert!((e[0] - 0.19).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(1e-3);
        c.warmup_epochs = 50.0;
        assert!(c.validate().is_err());
        let mut c = cfg(1e-3);
        c.lr = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = cfg(1e-3);
        c.ema_decay = 1.0;
        assert!(c.validate().is_err());
        assert!(cfg(1e-3).validate().is_ok());
    }
}

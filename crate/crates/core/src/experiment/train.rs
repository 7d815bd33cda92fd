use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSpec, ExperimentConfig};
use crate::augment::{load_image_dir, synth_dataset, Augmenter, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::optim::{lr_at, Optimizer, WeightEma};
use crate::stability::{normalized_epoch_minutes, RunRecord, REFERENCE_WORKERS};
use crate::tensor::{Mode, Tape};

const EVAL_BATCH: usize = 250;

/// Per-epoch training metrics. Validation errors are present only on
/// evaluation epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_err: Option<f64>,
    pub val_err_ema: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub curve: Vec<CurvePoint>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<SplitDataset> {
    match spec {
        DatasetSpec::Synthetic(s) => synth_dataset(s),
        DatasetSpec::Directory { path, image_size, val_fraction, seed } => {
            Ok(load_image_dir(path, *image_size, *val_fraction, *seed)?.0)
        }
    }
}

/// Top-1 error in percent.
pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let k = model.config().encoder.num_classes;
    let mut wrong = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let logits = model.predict(&data.images(chunk), Mode::Eval)?;
        for (row, &i) in logits.data().chunks_exact(k).zip(chunk) {
            let pred = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("k > 0");
            wrong += (pred != data.labels()[i] || !row[pred].is_finite()) as usize;
        }
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

fn run_id(cfg: &ExperimentConfig, model_name: &str) -> String {
    let label = cfg.name.as_deref().unwrap_or(model_name);
    let raw = format!(
        "{label}-{}-e{}-s{}-lr{:.4e}-wd{:.4e}",
        cfg.optim.optimizer, cfg.epochs, cfg.seed, cfg.optim.lr, cfg.optim.wd
    );
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') { c } else { '_' }).collect()
}

/// Trains one model from scratch. Runs are deterministic given the config:
/// shuffling, augmentation and initialization each draw from their own
/// seeded stream. A non-finite training loss stops the run and marks it
/// diverged; only configuration and data errors are returned as `Err`.
pub fn train(cfg: &ExperimentConfig, data: &SplitDataset, on_epoch: &mut dyn FnMut(&CurvePoint)) -> Result<TrainOutcome> {
    let cfg = cfg.resolved()?;
    let model_cfg = cfg.model_config()?;
    let enc = &model_cfg.encoder;
    if data.train.image_size() != enc.image_size || data.train.num_classes() != enc.num_classes {
        return Err(Error::Config(format!(
            "dataset is {}px/{} classes but the model expects {}px/{} classes",
            data.train.image_size(),
            data.train.num_classes(),
            enc.image_size,
            enc.num_classes
        )));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("train and validation splits must both be non-empty".into()));
    }

    let started = Instant::now();
    let mut model = Model::build(&model_cfg, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optim.clone(), &model)?;
    let mut ema = WeightEma::new(&model, cfg.optim.ema_decay);
    let mut aug_cfg = cfg.augment.clone();
    aug_cfg.rng_seed = aug_cfg.rng_seed.wrapping_add(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut augmenter = Augmenter::new(aug_cfg)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let n = data.train.len();
    let bsz = cfg.optim.minibatch_size.min(n);
    let steps = n / bsz;
    let mut order: Vec<usize> = (0..n).collect();
    let eps = cfg.augment.smoothing_eps;

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;
    let mut last_epoch_loss = None;
    let mut diverged = false;
    let (mut raw_err, mut ema_err, mut best_err) = (100.0f64, 100.0f64, 100.0f64);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for s in 0..steps {
            lr = lr_at(&cfg.optim, epoch as f64 + s as f64 / steps as f64)?;
            let batch = augmenter.apply(data.train.batch(&order[s * bsz..(s + 1) * bsz], eps)?)?;
            let tape = Tape::new();
            let out = model.forward(&tape, tape.constant(&batch.images), Mode::Train)?;
            let loss = out.logits.cross_entropy(&batch.targets)?;
            let value = loss.value().data()[0] as f64;
            initial_loss.get_or_insert(value);
            if !value.is_finite() {
                diverged = true;
                break 'epochs;
            }
            loss_sum += value;
            let grads = tape.backward(loss)?;
            for (p, v) in model.params_mut().iter_mut().zip(&out.params) {
                p.tensor.set_grad(grads.slice(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))?;
            }
            opt.step(model.params_mut(), lr)?;
            ema.update(&model);
        }
        let train_loss = loss_sum / steps as f64;
        last_epoch_loss = Some(train_loss);
        let last = epoch + 1 == cfg.epochs;
        let (mut val_err, mut val_err_ema) = (None, None);
        if last || (epoch + 1) % cfg.eval_every == 0 {
            raw_err = evaluate(&mut model, &data.val)?;
            ema.swap(&mut model);
            ema_err = evaluate(&mut model, &data.val)?;
            ema.swap(&mut model);
            best_err = best_err.min(if cfg.eval_ema { ema_err } else { raw_err });
            val_err = Some(raw_err);
            val_err_ema = Some(ema_err);
        }
        let point = CurvePoint { epoch: epoch + 1, train_loss, val_err, val_err_ema, lr };
        on_epoch(&point);
        curve.push(point);
    }

    if diverged {
        raw_err = 100.0;
        ema_err = 100.0;
    }
    let final_err = if cfg.eval_ema { ema_err } else { raw_err };
    let wall = started.elapsed().as_secs_f64().max(1e-9);
    let record = RunRecord {
        id: run_id(&cfg, &model_cfg.name),
        model_name: model_cfg.name.clone(),
        optimizer: cfg.optim.optimizer,
        lr: cfg.optim.lr,
        wd: cfg.optim.wd,
        epochs: cfg.epochs,
        seed: cfg.seed,
        final_top1_err: final_err,
        best_top1_err: best_err.min(final_err),
        raw_top1_err: raw_err,
        ema_top1_err: ema_err,
        used_ema: cfg.eval_ema,
        ema_decay: cfg.optim.ema_decay,
        diverged,
        initial_train_loss: initial_loss.filter(|l| l.is_finite()),
        final_train_loss: if diverged { None } else { last_epoch_loss },
        wall_time_seconds: wall,
        workers: 1,
        normalized_epoch_minutes: normalized_epoch_minutes(wall, 1, REFERENCE_WORKERS, cfg.epochs as f64)?,
    };
    Ok(TrainOutcome { record, curve })
}

#[cfg(test)]
mod tests {
    use super::super::tests::DESK;
    use super::*;

    #[test]
    fn tiny_run_is_deterministic_and_learns() {
        let cfg = ExperimentConfig::from_toml(DESK).unwrap();
        let data = load_dataset(&cfg.dataset).unwrap();
        let a = train(&cfg, &data, &mut |_| {}).unwrap();
        let b = train(&cfg, &data, &mut |_| {}).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.record.final_top1_err.to_bits(), b.record.final_top1_err.to_bits());
        assert_eq!(a.curve.len(), 4);
        assert!(!a.record.diverged);
        assert!(a.record.final_train_loss.unwrap() < a.record.initial_train_loss.unwrap());
    }

    #[test]
    fn huge_lr_diverges_without_error() {
        let mut cfg = ExperimentConfig::from_toml(DESK).unwrap();
        cfg.optim.optimizer = crate::optim::OptimizerKind::Sgd;
        cfg.optim.lr = 1e12;
        let data = load_dataset(&cfg.dataset).unwrap();
        let out = train(&cfg, &data, &mut |_| {}).unwrap();
        assert!(out.record.diverged);
        assert_eq!(out.record.final_top1_err, 100.0);
        assert!(out.record.validate().is_ok());
    }
}

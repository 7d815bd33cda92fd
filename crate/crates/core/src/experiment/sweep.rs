use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use super::{train, ExperimentConfig, RunStore};
use crate::augment::SplitDataset;
use crate::error::{Error, Result};
use crate::stability::{compute_edf, sample_lr_wd, Edf, RunRecord, SweepSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    /// In trial order.
    pub records: Vec<RunRecord>,
    pub edf: Edf,
}

/// Trains one run per sampled `(lr, wd)` pair on up to `parallel` threads.
/// Each trial is single-threaded and seeded identically, so results do not
/// depend on `parallel`. Finished trials stream to the store through this
/// thread, which is its only writer. Writes `edf.csv` and `scatter.csv` to
/// `sweep_dir`.
pub fn run_sweep(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    parallel: usize,
    data: &SplitDataset,
    store: &mut RunStore,
    sweep_dir: &Path,
    on_trial: &mut dyn FnMut(usize, &RunRecord),
) -> Result<SweepOutcome> {
    let base = base.resolved()?;
    let pairs = sample_lr_wd(spec)?;
    let label = base.name.clone().unwrap_or_else(|| base.model.config.as_ref().map(|m| m.name.clone()).unwrap_or_default());
    let trials: Vec<ExperimentConfig> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(lr, wd))| {
            let mut c = base.clone();
            c.optim.lr = lr;
            c.optim.wd = wd;
            c.name = Some(format!("{label}-sweep{}-t{i:03}", spec.seed));
            c
        })
        .collect();

    let next = AtomicUsize::new(0);
    let workers = parallel.clamp(1, trials.len());
    let mut slots: Vec<Option<RunRecord>> = vec![None; trials.len()];
    let mut first_err = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let (tx, next, trials) = (tx.clone(), &next, &trials);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = trials.get(i) else { break };
                let result = train(cfg, data, &mut |_| {}).and_then(|o| Ok((o, cfg.to_toml()?)));
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            let stored = result.and_then(|(outcome, text)| store.append(&outcome, Some(&text)));
            match stored {
                Ok(rec) => {
                    on_trial(i, &rec);
                    slots[i] = Some(rec);
                }
                Err(e) => {
                    // Stop handing out new trials; in-flight ones still finish.
                    next.store(usize::MAX / 2, Ordering::Relaxed);
                    first_err.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every trial reported")).collect();
    let edf = compute_edf(&records.iter().map(|r| r.final_top1_err).collect::<Vec<_>>())?;

    std::fs::create_dir_all(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    let edf_path = sweep_dir.join("edf.csv");
    edf.write_csv(std::fs::File::create(&edf_path).map_err(|e| Error::io(&edf_path, e))?)?;
    let scatter_path = sweep_dir.join("scatter.csv");
    let mut w = crate::csv_writer(std::fs::File::create(&scatter_path).map_err(|e| Error::io(&scatter_path, e))?);
    w.write_record(["id", "lr", "wd", "lr_wd", "top1_err", "diverged"])?;
    for r in &records {
        w.write_record([r.id.clone(), r.lr.to_string(), r.wd.to_string(), (r.lr * r.wd).to_string(), r.final_top1_err.to_string(), r.diverged.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&scatter_path, e))?;
    Ok(SweepOutcome { records, edf })
}

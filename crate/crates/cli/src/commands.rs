use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use vitstem::complexity::{analyze, analyze_stem, write_csv, ComplexityReport};
use vitstem::experiment::{load_dataset, run_sweep, train, write_report, ExperimentConfig, RunStore};
use vitstem::models::{canonical_config, canonical_names, canonical_stem, stem_names, ModelConfig};
use vitstem::stability::{
    compute_edf, delta_to_asymptotic, optimizer_gap, reference_sweep, write_deltas_csv, write_gaps_csv, CenterSource,
    RunRecord, SweepSpec,
};
use vitstem::tensor::suite::gradcheck_suite;
use vitstem::{Error, Result};

use crate::{AnalyzeArgs, Centers, Cli, Command, Format, GradcheckArgs, Output, StabilityArgs, SweepArgs, TrainArgs};

const DEFAULT_OUT: &str = "vitstem-out";
const STEM_IMAGE_SIZE: usize = 224;

/// Runs the selected command. `progress` receives human-readable status
/// lines while long commands run.
pub fn execute(cli: &Cli, progress: &mut dyn FnMut(&str)) -> Result<Output> {
    let name = cli.command.name();
    let (data, text, ok) = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Train(a) => cmd_train(a, cli.out.as_deref(), progress)?,
        Command::Sweep(a) => cmd_sweep(a, cli.out.as_deref(), progress)?,
        Command::Stability(a) => cmd_stability(a, &out_root(cli.out.as_deref(), None))?,
        Command::Gradcheck(a) => cmd_gradcheck(a)?,
        Command::Report => cmd_report(&out_root(cli.out.as_deref(), None))?,
    };
    Ok(Output { command: name, ok, data, text })
}

fn out_root(cli: Option<&Path>, config: Option<&Path>) -> PathBuf {
    cli.or(config).map_or_else(|| PathBuf::from(DEFAULT_OUT), Path::to_path_buf)
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn model_from_file(path: &Path) -> Result<ModelConfig> {
    match ExperimentConfig::load(path) {
        Ok(cfg) => cfg.model_config(),
        Err(Error::Toml(first)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let cfg: ModelConfig = toml::from_str(&text).map_err(|_| Error::Toml(first))?;
            cfg.validate()?;
            Ok(cfg)
        }
        Err(e) => Err(e),
    }
}

type Rendered = (Value, String, bool);

fn report_json(r: &ComplexityReport) -> Value {
    json!({
        "name": r.name,
        "flops": r.flops,
        "params": r.params,
        "acts": r.acts,
        "flops_B": r.flops_b(),
        "params_M": r.params_m(),
        "acts_M": r.acts_m(),
    })
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<Rendered> {
    let mut models: Vec<String> = a.model.clone();
    let mut stems: Vec<String> = a.stem.clone();
    if a.all_canonical {
        models.extend(canonical_names().iter().map(|s| s.to_string()));
        stems.extend(stem_names().iter().map(|s| s.to_string()));
    }
    let mut reports = Vec::new();
    for m in &models {
        reports.push(analyze(&canonical_config(m)?)?);
    }
    if let Some(path) = &a.config {
        reports.push(analyze(&model_from_file(path)?)?);
    }
    for s in &stems {
        reports.push(analyze_stem(&format!("stem {s}"), &canonical_stem(s)?, STEM_IMAGE_SIZE)?);
    }
    if reports.is_empty() {
        return Err(Error::Config("nothing to analyze: pass --model, --stem, --config or --all-canonical".into()));
    }
    let data = json!({ "reports": reports.iter().map(report_json).collect::<Vec<_>>() });
    let text = match a.format {
        Format::Csv => csv_string(|b| write_csv(b, &reports))?,
        Format::Json => serde_json::to_string_pretty(&data)? + "\n",
        Format::Table => {
            let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
            let mut t = format!("{:<width$}  {:>10}  {:>10}  {:>10}\n", "name", "flops (B)", "params (M)", "acts (M)");
            for r in &reports {
                let _ = writeln!(t, "{:<width$}  {:>10.3}  {:>10.3}  {:>10.3}", r.name, r.flops_b(), r.params_m(), r.acts_m());
            }
            t
        }
    };
    Ok((data, text, true))
}

fn load_experiment(path: &Path, seed: Option<u64>, epochs: Option<usize>) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)?.with_overrides(seed, epochs).resolved()
}

fn record_line(r: &RunRecord) -> String {
    format!(
        "{}  {}  lr {:.3e}  wd {:.3e}  top-1 err {:.2}%{}",
        r.id,
        r.optimizer,
        r.lr,
        r.wd,
        r.final_top1_err,
        if r.diverged { "  (diverged)" } else { "" }
    )
}

fn cmd_train(a: &TrainArgs, out: Option<&Path>, progress: &mut dyn FnMut(&str)) -> Result<Rendered> {
    let cfg = load_experiment(&a.config, a.seed, a.epochs)?;
    let root = out_root(out, cfg.output_dir.as_deref());
    let data = load_dataset(&cfg.dataset)?;
    let mut store = RunStore::open(&root)?;
    let outcome = train(&cfg, &data, &mut |p| {
        let val = p.val_err.map(|e| format!("  val err {e:.2}%")).unwrap_or_default();
        progress(&format!("epoch {:>3}  loss {:.4}  lr {:.3e}{val}", p.epoch, p.train_loss, p.lr));
    })?;
    let record = store.append(&outcome, Some(&cfg.to_toml()?))?;
    let text = format!(
        "{}\ninitial loss {}  final loss {}  wall {:.1}s\nstore {}\n",
        record_line(&record),
        record.initial_train_loss.map_or("-".into(), |l| format!("{l:.4}")),
        record.final_train_loss.map_or("-".into(), |l| format!("{l:.4}")),
        record.wall_time_seconds,
        store.log_path().display()
    );
    let data = json!({ "record": record, "curve": outcome.curve, "store": store.root() });
    Ok((data, text, true))
}

fn cmd_sweep(a: &SweepArgs, out: Option<&Path>, progress: &mut dyn FnMut(&str)) -> Result<Rendered> {
    let cfg = load_experiment(&a.config, a.seed, a.epochs)?;
    let root = out_root(out, cfg.output_dir.as_deref());
    let model_name = cfg.model_config()?.name;
    let opt = cfg.optim.optimizer;
    let mut spec = match a.centers {
        Centers::Config => {
            let mut s = SweepSpec::new(cfg.optim.lr, cfg.optim.wd, a.sweep_seed);
            s.low_factor = a.low;
            s.high_factor = a.high;
            s
        }
        Centers::PerModel => {
            let mut s = reference_sweep(&model_name, opt, CenterSource::PerModel, a.sweep_seed)?;
            s.low_factor = a.low;
            s.high_factor = a.high;
            s
        }
        Centers::Family => reference_sweep(&model_name, opt, CenterSource::Family, a.sweep_seed)?,
    };
    spec.center_lr = a.center_lr.unwrap_or(spec.center_lr);
    spec.center_wd = a.center_wd.unwrap_or(spec.center_wd);
    spec.n_samples = a.samples;
    spec.validate()?;

    let parallel = a
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get() / 2).max(1));
    let data = load_dataset(&cfg.dataset)?;
    let mut store = RunStore::open(&root)?;
    let label = cfg.name.clone().unwrap_or_else(|| model_name.split('@').next().unwrap_or(&model_name).to_string());
    let dir = root.join("sweeps").join(format!("{}-{opt}-e{}-s{}", label.replace(['/', ' '], "_"), cfg.epochs, a.sweep_seed));
    let total = spec.n_samples;
    let mut done = 0;
    let outcome = run_sweep(&cfg, &spec, parallel, &data, &mut store, &dir, &mut |_, r| {
        done += 1;
        progress(&format!("[{done}/{total}] {}", record_line(r)));
    })?;
    let (lr_lo, lr_hi) = spec.lr_interval();
    let (wd_lo, wd_hi) = spec.wd_interval();
    let best = outcome.records.iter().map(|r| r.final_top1_err).fold(f64::INFINITY, f64::min);
    let mut text = format!(
        "{total} trials of {model_name} ({opt}), lr in [{lr_lo:.3e}, {lr_hi:.3e}], wd in [{wd_lo:.3e}, {wd_hi:.3e}]\nbest top-1 err {best:.2}%\n"
    );
    for (d, f) in outcome.edf.deltas.iter().zip(&outcome.edf.cum_fracs) {
        let _ = writeln!(text, "  delta {d:>7.2}  frac {f:.3}");
    }
    let _ = writeln!(text, "edf: {}\nscatter: {}", dir.join("edf.csv").display(), dir.join("scatter.csv").display());
    let data = json!({
        "model": model_name,
        "optimizer": opt,
        "spec": spec,
        "records": outcome.records,
        "edf": outcome.edf,
        "edf_csv": dir.join("edf.csv"),
        "scatter_csv": dir.join("scatter.csv"),
    });
    Ok((data, text, true))
}

#[derive(serde::Serialize)]
struct EdfSummary {
    model: String,
    optimizer: String,
    epochs: usize,
    n: usize,
    diverged: usize,
    best_err: f64,
    frac_within_1: f64,
    frac_within_5: f64,
}

fn cmd_stability(a: &StabilityArgs, root: &Path) -> Result<Rendered> {
    let store = RunStore::open(root)?;
    let records = store.records()?;
    if records.is_empty() {
        return Err(Error::Aggregation(format!("no runs in {}", store.log_path().display())));
    }
    let mut by_model: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    let mut by_group: BTreeMap<(String, String, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        by_model.entry((r.model_name.clone(), r.optimizer.to_string())).or_default().push(r.clone());
        by_group.entry((r.model_name.clone(), r.optimizer.to_string(), r.epochs)).or_default().push(r);
    }
    let mut deltas = Vec::new();
    for group in by_model.values() {
        let asym = a.asymptotic.unwrap_or_else(|| group.iter().map(|r| r.epochs).max().expect("non-empty"));
        deltas.extend(delta_to_asymptotic(group, asym)?);
    }
    let gaps = optimizer_gap(&records)?;
    let mut summary = Vec::new();
    for ((model, optimizer, epochs), rs) in &by_group {
        let errs: Vec<f64> = rs.iter().map(|r| r.final_top1_err).collect();
        let edf = compute_edf(&errs)?;
        summary.push(EdfSummary {
            model: model.clone(),
            optimizer: optimizer.clone(),
            epochs: *epochs,
            n: rs.len(),
            diverged: rs.iter().filter(|r| r.diverged).count(),
            best_err: errs.iter().copied().fold(f64::INFINITY, f64::min),
            frac_within_1: edf.at(1.0),
            frac_within_5: edf.at(5.0),
        });
    }

    let deltas_csv = csv_string(|b| write_deltas_csv(b, &deltas))?;
    let gaps_csv = csv_string(|b| write_gaps_csv(b, &gaps))?;
    let summary_csv = csv_string(|b| {
        let mut w = vitstem::csv_writer(b);
        for s in &summary {
            w.serialize(s)?;
        }
        if summary.is_empty() {
            w.write_record(["model", "optimizer", "epochs", "n", "diverged", "best_err", "frac_within_1", "frac_within_5"])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    let dir = root.join("stability");
    let paths = [dir.join("deltas.csv"), dir.join("gaps.csv"), dir.join("edf_summary.csv")];
    for (p, t) in paths.iter().zip([&deltas_csv, &gaps_csv, &summary_csv]) {
        write_text(p, t)?;
    }
    let data = json!({ "deltas": deltas, "gaps": gaps, "edf_summary": summary, "files": paths });
    let text = match a.format {
        Format::Csv => format!("{deltas_csv}\n{gaps_csv}\n{summary_csv}"),
        Format::Json => serde_json::to_string_pretty(&data)? + "\n",
        Format::Table => {
            let mut t = String::from("gap to longest schedule\n");
            for d in &deltas {
                let _ = writeln!(t, "  {:<40} {:<6} {:>5}ep  err {:>6.2}  delta {:>6.2}", d.model, d.optimizer, d.epochs, d.top1_err, d.delta);
            }
            t.push_str("optimizer gap (sgd - adamw)\n");
            if gaps.is_empty() {
                t.push_str("  (no model has both optimizers at the same schedule)\n");
            }
            for g in &gaps {
                let flag = if g.adamw_fallback || g.sgd_fallback { "  fallback" } else { "" };
                let _ = writeln!(t, "  {:<40} {:>5}ep  adamw {:>6.2}  sgd {:>6.2}  gap {:>6.2}{flag}", g.model, g.epochs, g.adamw_err, g.sgd_err, g.gap);
            }
            t.push_str("error distribution summary\n");
            for s in &summary {
                let _ = writeln!(
                    t,
                    "  {:<40} {:<6} {:>5}ep  n {:>3}  best {:>6.2}  within 1: {:.2}  within 5: {:.2}  diverged {}",
                    s.model, s.optimizer, s.epochs, s.n, s.best_err, s.frac_within_1, s.frac_within_5, s.diverged
                );
            }
            t
        }
    };
    Ok((data, text, true))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Rendered> {
    let results = gradcheck_suite(a.seeds)?;
    let ok = results.iter().all(|r| r.passed);
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(text, "{:<36} {}  max rel. error {:.3e} over {} cases", r.op, if r.passed { "PASS" } else { "FAIL" }, r.max_rel_err, r.cases);
    }
    let _ = writeln!(text, "{}", if ok { "all ops pass" } else { "gradient check FAILED" });
    Ok((json!({ "passed": ok, "results": results }), text, ok))
}

fn cmd_report(root: &Path) -> Result<Rendered> {
    let store = RunStore::open(root)?;
    let summary = write_report(&store, &root.join("report"))?;
    let mut text = format!("{} EDF groups, {} training curves\n", summary.edf_groups, summary.curve_runs);
    for f in &summary.files {
        let _ = writeln!(text, "  {}", f.display());
    }
    Ok((serde_json::to_value(&summary)?, text, true))
}

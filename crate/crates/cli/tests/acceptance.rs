//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always reach the
//! terminal. The desk training criterion drives the release-style `vitstem`
//! binary exactly as a user would and takes several minutes.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use vitstem::complexity::{linear_fit, pearson};
use vitstem::models::{canonical_config, scaled_config, Model, ParamClass, ScaleSpec};
use vitstem::optim::{adamw_step, ema_update, lr_at, sgd_step, OptimConfig, Optimizer, OptimizerKind};
use vitstem::stability::{compute_edf, ks_test, sample_lr_wd, SweepSpec};

type Outcome = Result<String, String>;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn vitstem(out: &Path, args: &[&str]) -> Result<Value, String> {
    let res = Command::new(env!("CARGO_BIN_EXE_vitstem"))
        .arg("--json")
        .args(args)
        .env("VITSTEM_OUT", out)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    let v: Value = serde_json::from_slice(&res.stdout)
        .map_err(|e| format!("{args:?}: unparsable output ({e}): {}", String::from_utf8_lossy(&res.stderr)))?;
    if !res.status.success() || v["ok"] != Value::Bool(true) {
        return Err(format!("{args:?} failed: {v}"));
    }
    Ok(v["data"].clone())
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want
}

fn reports(data: &Value) -> Vec<(String, f64, f64, f64)> {
    data["reports"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|r| {
            let f = |k: &str| r[k].as_f64().unwrap_or(f64::NAN);
            (r["name"].as_str().unwrap_or("").to_string(), f("flops"), f("params"), f("acts"))
        })
        .collect()
}

fn complexity_table(out: &Path) -> Outcome {
    let expected = [
        ("ViT_P-1GF", 1.1, 4.8, 5.5),
        ("ViT_P-4GF", 3.9, 18.5, 11.1),
        ("ViT_P-18GF", 17.5, 86.7, 24.0),
        ("ViT_P-36GF", 35.9, 178.4, 37.3),
        ("ViT_C-1GF", 1.1, 4.6, 5.7),
        ("ViT_C-4GF", 4.0, 17.8, 11.3),
        ("ViT_C-18GF", 17.7, 81.6, 24.1),
        ("ViT_C-36GF", 35.0, 167.8, 36.7),
    ];
    let mut args = vec!["analyze"];
    for (name, ..) in &expected {
        args.extend(["--model", name]);
    }
    let start = Instant::now();
    let data = vitstem(out, &args)?;
    let secs = start.elapsed().as_secs_f64();
    let rows = reports(&data);
    check(rows.len() == 8, "expected eight reports")?;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for ((name, flops, params, acts), (_, f, p, a)) in expected.iter().zip(&rows) {
        let (ef, ep, ea) = (rel(f / 1e9, *flops), rel(p / 1e6, *params), rel(a / 1e6, *acts));
        check(ef < 0.03 && ep < 0.01 && ea < 0.03, format!("{name}: flops {ef:.3} params {ep:.3} acts {ea:.3}"))?;
        worst = (worst.0.max(ef), worst.1.max(ep), worst.2.max(ea));
    }
    check(secs < 1.0, format!("analyze took {secs:.2}s"))?;
    Ok(format!(
        "8 models, worst rel. error flops {:.1}% params {:.2}% acts {:.1}%, {secs:.2}s",
        worst.0 * 100.0,
        worst.1 * 100.0,
        worst.2 * 100.0
    ))
}

fn stem_table(out: &Path) -> Outcome {
    let mut args = vec!["analyze"];
    for s in ["P", "C", "S1", "S2", "S3", "S4"] {
        args.extend(["--stem", s]);
    }
    let rows = reports(&vitstem(out, &args)?);
    let get = |s: &str| rows.iter().find(|r| r.0 == format!("stem {s}")).cloned().ok_or(format!("missing stem {s}"));
    for (s, want) in [("P", 58.0), ("C", 435.0), ("S2", 422.0), ("S3", 458.0), ("S4", 407.0)] {
        let f = get(s)?.1 / 1e6;
        check(rel(f, want) < 0.02, format!("stem {s} flops {f:.1}M vs {want}M"))?;
    }
    for (s, want) in [("P", 0.3), ("C", 1.0)] {
        let p = get(s)?.2 / 1e6;
        check(rel(p, want) < 0.05, format!("stem {s} params {p:.3}M vs {want}M"))?;
    }
    for (s, want) in [("C", 1.2), ("S2", 1.1), ("S3", 1.6), ("S4", 2.9)] {
        let a = get(s)?.3 / 1e6;
        check(rel(a, want) < 0.10, format!("stem {s} acts {a:.3}M vs {want}M"))?;
    }
    let (p_acts, s1_acts) = (get("P")?.3 / 1e6, get("S1")?.3 / 1e6);
    Ok(format!("flops, params and acts within tolerance; flagged cells P acts {p_acts:.3}M (table 0.8M), S1 acts {s1_acts:.2}M (table 1.3M)"))
}

fn flop_parity(out: &Path) -> Outcome {
    let mut worst = 0.0f64;
    for size in ["1GF", "4GF", "18GF", "36GF"] {
        let (pn, cn) = (format!("ViT_P-{size}"), format!("ViT_C-{size}"));
        let rows = reports(&vitstem(out, &["analyze", "--model", &pn, "--model", &cn])?);
        let gap = (rows[1].1 - rows[0].1).abs() / rows[0].1;
        let (p, c) = (canonical_config(&pn).map_err(|e| e.to_string())?, canonical_config(&cn).map_err(|e| e.to_string())?);
        check(c.encoder.num_blocks + 1 == p.encoder.num_blocks, format!("{size}: block counts"))?;
        check(gap < 0.05, format!("{size}: flop gap {gap:.3}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("4 pairs, one block fewer, max flop gap {:.2}%", worst * 100.0))
}

fn gradcheck(out: &Path) -> Outcome {
    let start = Instant::now();
    let data = vitstem(out, &["gradcheck", "--seeds", "20"])?;
    let secs = start.elapsed().as_secs_f64();
    let results = data["results"].as_array().ok_or("no results")?;
    let worst = results.iter().filter_map(|r| r["max_rel_err"].as_f64()).fold(0.0, f64::max);
    check(worst < 1e-4, format!("max rel. error {worst:.2e}"))?;
    check(secs < 60.0, format!("suite took {secs:.1}s"))?;
    Ok(format!("{} ops x 20 seeds, max rel. error {worst:.1e}, {secs:.1}s", results.len()))
}

fn optimizer_oracles() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let (mut th, mut v) = ([1.0f64], [0.0f64]);
    sgd_step(&mut th, &[0.5], &mut v, 0.1, 0.0, 0.9, true);
    check(close(v[0], 0.5) && close(th[0], 0.95), format!("sgd step gave theta {} v {}", th[0], v[0]))?;

    let (mut th, mut m, mut s) = ([1.0f64], [0.0], [0.0]);
    adamw_step(&mut th, &[0.5], &mut m, &mut s, 1, 0.1, 0.1, 0.9, 0.999, 1e-8, true);
    let want = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.1 * 1.0);
    check(close(th[0], want), format!("adamw step gave {} want {want}", th[0]))?;

    let (mut th, mut m, mut s) = ([2.0f64], [0.0], [0.0]);
    adamw_step(&mut th, &[0.0], &mut m, &mut s, 1, 0.1, 0.1, 0.9, 0.999, 1e-8, true);
    check(close(th[0], 2.0 * (1.0 - 0.01)), "zero-gradient adamw step")?;

    let mut e = [0.0f64];
    ema_update(&mut e, &[1.0], 0.9);
    ema_update(&mut e, &[1.0], 0.9);
    check(close(e[0], 0.19), format!("ema gave {}", e[0]))?;

    let cfg = OptimConfig::new(OptimizerKind::Adamw, 1e-3, 0.0, 50.0, 2048);
    let at = |t| lr_at(&cfg, t).map_err(|e| e.to_string());
    check(at(0.0)? == 0.0 && close(at(5.0)?, 1e-3), "warmup endpoints")?;
    check(close(at(27.5)?, 5e-4) && close(at(50.0)?, 0.0), "cosine midpoint/end")?;
    Ok("sgd, adamw, ema and schedule points exact to 1e-12".into())
}

fn desk_model() -> Result<Model, String> {
    let spec = ScaleSpec::new(32, 4, 1.0 / 6.0, 0.25).heads(4).classes(10);
    let cfg = scaled_config(&canonical_config("ViT_C-4GF").map_err(|e| e.to_string())?, &spec).map_err(|e| e.to_string())?;
    Model::build(&cfg, 5).map_err(|e| e.to_string())
}

fn decay_exclusion() -> Outcome {
    let mut checked = 0;
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adamw] {
        let mut runs = Vec::new();
        for wd in [0.0, 10.0] {
            let mut model = desk_model()?;
            let mut opt = Optimizer::new(OptimConfig::new(kind, 1e-3, wd, 10.0, 64), &model).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..5 {
                for p in model.params_mut() {
                    let g = (0..p.tensor.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                    p.tensor.set_grad(g).map_err(|e| e.to_string())?;
                }
                opt.step(model.params_mut(), 0.01).map_err(|e| e.to_string())?;
            }
            runs.push(model);
        }
        for (a, b) in runs[0].params().iter().zip(runs[1].params()) {
            let same = a.tensor.data() == b.tensor.data();
            match a.class {
                ParamClass::Weight => check(!same, format!("{kind}: {} ignored wd", a.name))?,
                _ => {
                    check(same, format!("{kind}: {} was decayed", a.name))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} gain/bias tensors identical under wd 0 and 10 (sgd and adamw)"))
}

fn edf_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let n = rng.random_range(1..80);
        let mut errs: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..100.0f64) * 2.0).round() / 2.0).collect();
        let e = compute_edf(&errs).map_err(|x| x.to_string())?;
        let valid = e.deltas.first() == Some(&0.0)
            && e.deltas.windows(2).all(|w| w[0] < w[1])
            && e.cum_fracs.windows(2).all(|w| w[0] < w[1])
            && e.cum_fracs.iter().all(|&f| f > 0.0 && f <= 1.0)
            && e.cum_fracs.last() == Some(&1.0);
        check(valid, format!("input {trial} is not a CDF path"))?;
        errs.shuffle(&mut rng);
        check(compute_edf(&errs).map_err(|x| x.to_string())? == e, format!("input {trial} depends on order"))?;
    }
    let mut spec = SweepSpec::new(1e-3, 0.24, 99);
    spec.n_samples = 10_000;
    let draws = sample_lr_wd(&spec).map_err(|e| e.to_string())?;
    let mut ps = Vec::new();
    for (center, axis) in [(spec.center_lr, 0), (spec.center_wd, 1)] {
        let (a, b) = ((center * spec.low_factor).ln(), (center * spec.high_factor).ln());
        let xs: Vec<f64> = draws.iter().map(|d| if axis == 0 { d.0 } else { d.1 }).collect();
        let (_, p) = ks_test(&xs, |x| ((x.ln() - a) / (b - a)).clamp(0.0, 1.0)).map_err(|e| e.to_string())?;
        check(p > 0.01, format!("KS p = {p:.4}"))?;
        ps.push(p);
    }
    Ok(format!("1000 inputs valid and order-free; KS p lr {:.3}, wd {:.3}", ps[0], ps[1]))
}

fn edf_csv_ok(path: &Path) -> Result<usize, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    check(!text.contains('\r'), "CRLF in csv")?;
    let mut lines = text.lines();
    check(lines.next() == Some("delta,cum_frac"), format!("{}: bad header", path.display()))?;
    let mut last = (-1.0f64, 0.0f64);
    let mut rows = 0;
    for line in lines {
        let (d, f) = line.split_once(',').ok_or("bad row")?;
        let (d, f): (f64, f64) = (d.parse().map_err(|_| "bad delta")?, f.parse().map_err(|_| "bad frac")?);
        check(d > last.0 && f > last.1 && f <= 1.0, format!("{}: not monotone", path.display()))?;
        last = (d, f);
        rows += 1;
    }
    check(last.1 == 1.0, "EDF does not reach 1")?;
    Ok(rows)
}

fn desk_end_to_end(out: &Path) -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for file in ["desk_p.toml", "desk_c.toml"] {
        let data = vitstem(out, &["train", "--config", config(file).to_str().unwrap()])?;
        let r = &data["record"];
        let (first, last) = (r["initial_train_loss"].as_f64().unwrap_or(f64::NAN), r["final_train_loss"].as_f64().unwrap_or(f64::NAN));
        let err = r["final_top1_err"].as_f64().unwrap_or(f64::NAN);
        check(r["epochs"] == 20 && r["optimizer"] == "adamw", format!("{file}: wrong recipe"))?;
        check(last < 0.5 * first, format!("{file}: loss {first:.3} -> {last:.3}"))?;
        check(err < 50.0, format!("{file}: val err {err:.2}%"))?;
        summary.push(format!("{file}: loss {first:.2}->{last:.2}, err {err:.1}%"));
    }
    let train_secs = start.elapsed().as_secs_f64();
    check(train_secs < 900.0, format!("training took {train_secs:.0}s"))?;

    let mut edf_rows = Vec::new();
    for file in ["sweep_p.toml", "sweep_c.toml"] {
        let data = vitstem(out, &["sweep", "--config", config(file).to_str().unwrap(), "--samples", "16", "--parallel", "1"])?;
        check(data["records"].as_array().map_or(0, Vec::len) == 16, format!("{file}: expected 16 trials"))?;
        edf_rows.push(edf_csv_ok(Path::new(data["edf_csv"].as_str().ok_or("no edf path")?))?);
    }
    let stab = vitstem(out, &["stability"])?;
    for f in stab["files"].as_array().ok_or("no stability files")? {
        let p = f.as_str().unwrap_or("");
        check(Path::new(p).is_file(), format!("missing {p}"))?;
    }
    check(stab["edf_summary"].as_array().map_or(0, Vec::len) >= 4, "stability summary lacks groups")?;
    let report = vitstem(out, &["report"])?;
    check(report["edf_groups"].as_u64().unwrap_or(0) >= 2, "report lacks EDF groups")?;
    Ok(format!(
        "{}; training {train_secs:.0}s; 2x16-trial EDFs ({} and {} steps), stability + report written; total {:.0}s",
        summary.join("; "),
        edf_rows[0],
        edf_rows[1],
        start.elapsed().as_secs_f64()
    ))
}

fn statistics() -> Outcome {
    let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.1 - 3.0).collect();
    let up: Vec<f64> = xs.iter().map(|x| 4.0 * x - 2.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -0.5 * x + 7.0).collect();
    let (r1, r2) = (pearson(&xs, &up).map_err(|e| e.to_string())?, pearson(&xs, &down).map_err(|e| e.to_string())?);
    check((r1 - 1.0).abs() < 1e-12 && (r2 + 1.0).abs() < 1e-12, format!("r = {r1}, {r2}"))?;
    let ys: Vec<f64> = xs.iter().map(|x| 1.31 * x + 5.0).collect();
    let (slope, intercept) = linear_fit(&xs, &ys).map_err(|e| e.to_string())?;
    check((slope - 1.31).abs() < 1e-9 && (intercept - 5.0).abs() < 1e-9, format!("fit {slope}, {intercept}"))?;
    Ok(format!("r = +1/-1 exact, fit slope {slope:.12} intercept {intercept:.12}"))
}

fn determinism(root: &Path) -> Outcome {
    let cfg = config("sweep_p.toml");
    let mut runs = Vec::new();
    for dir in ["det_a", "det_b"] {
        let data = vitstem(&root.join(dir), &["train", "--config", cfg.to_str().unwrap(), "--seed", "7"])?;
        runs.push(data);
    }
    let bits = |v: &Value, k: &str| v["record"][k].as_f64().map(f64::to_bits);
    for key in ["final_top1_err", "raw_top1_err", "ema_top1_err", "final_train_loss", "initial_train_loss"] {
        check(bits(&runs[0], key) == bits(&runs[1], key), format!("{key} differs"))?;
    }
    check(runs[0]["curve"] == runs[1]["curve"], "training curves differ")?;
    Ok(format!(
        "two seed-7 runs agree bit for bit (final err {}%, final loss {})",
        runs[0]["record"]["final_top1_err"], runs[0]["record"]["final_train_loss"]
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let out = root.join("store");
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("complexity table", &|| complexity_table(&out)),
        ("stem table", &|| stem_table(&out)),
        ("flop parity", &|| flop_parity(&out)),
        ("gradient checks", &|| gradcheck(&out)),
        ("optimizer oracles", &optimizer_oracles),
        ("decay exclusion", &decay_exclusion),
        ("EDF properties", &edf_properties),
        ("desk-scale end-to-end", &|| desk_end_to_end(&out)),
        ("statistics utilities", &statistics),
        ("determinism", &|| determinism(root)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_vitstem");

fn run(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("VITSTEM_OUT");
    if let Some(dir) = out_env {
        cmd.env("VITSTEM_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: &str = r#"
seed = 3
epochs = 1
eval_every = 1

[model]
canonical = "ViT_P-4GF"
scale = { image_size = 16, patch_size = 4, width_factor = 0.0833333333, depth_factor = 0.1, num_heads = 2, num_classes = 4 }

[optim]
optimizer = "adamw"
lr = 0.064
wd = 0.05
warmup_epochs = 0
minibatch_size = 16

[augment]
mix_mode = "none"
smoothing_eps = 0.1

[dataset]
kind = "synthetic"
n = 64
image_size = 16
num_classes = 4
seed = 0
"#;

#[test]
fn analyze_csv_has_header_and_lf_lines() {
    let o = run(&["analyze", "--model", "ViT_P-1GF", "--stem", "C", "--format", "csv"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "name,flops_B,params_M,acts_M");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ViT_P-1GF,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn analyze_all_canonical_json_lists_models_and_stems() {
    let o = run(&["analyze", "--all-canonical", "--format", "json"], None);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v["reports"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"ViT_C-36GF"));
    assert!(names.contains(&"stem S4"));
}

#[test]
fn json_flag_wraps_output() {
    let o = run(&["--json", "analyze", "--model", "ViT_C-4GF"], None);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["command"], "analyze");
    assert_eq!(v["ok"], true);
    let flops = v["data"]["reports"][0]["flops_B"].as_f64().unwrap();
    assert!((flops - 4.0).abs() < 0.12);
}

#[test]
fn table_is_default_format() {
    let o = run(&["analyze", "--stem", "P"], None);
    let text = stdout(&o);
    assert!(text.starts_with("name"));
    assert!(text.contains("stem P"));
}

#[test]
fn unknown_model_fails_cleanly() {
    let o = run(&["--json", "analyze", "--model", "ViT_Q-2GF"], None);
    assert!(!o.status.success());
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["ok"], false);
    assert!(v["error"].as_str().unwrap().contains("ViT_Q-2GF"));

    let o = run(&["analyze"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to analyze"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = run(&["analyze", "--format", "xml"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_and_flag_choose_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    let env_root = tmp.path().join("from-env");
    let o = run(&["--json", "train", "--config", cfg], Some(&env_root));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_root.join("runs.jsonl").is_file());

    let flag_root = tmp.path().join("from-flag");
    let o = run(&["--json", "train", "--config", cfg, "--seed", "4", "--out", flag_root.to_str().unwrap()], Some(&env_root));
    assert!(o.status.success());
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["data"]["record"]["seed"], 4);
    assert!(flag_root.join("runs.jsonl").is_file());
    let env_runs = std::fs::read_to_string(env_root.join("runs.jsonl")).unwrap();
    assert_eq!(env_runs.lines().count(), 1);

    let o = run(&["report"], Some(&env_root));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

//! The `keeplora` binary end to end.

mod common;

use common::{config_path, fixture_path};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn keeplora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keeplora")).args(args).output().unwrap()
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    keeplora(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Golden config with `key = value` lines replaced and `[spectra…]` tables optionally dropped.
fn variant_config(dir: &Path, edits: &[(&str, &str)], drop_spectra: bool, append: &str) -> PathBuf {
    let text = fs::read_to_string(config_path("golden.toml")).unwrap();
    let mut out = String::new();
    let mut in_spectra = false;
    for line in text.lines() {
        if line.starts_with('[') {
            in_spectra = line.starts_with("[spectra");
        }
        if drop_spectra && in_spectra {
            continue;
        }
        let key = line.split('=').next().unwrap().trim();
        match edits.iter().find(|(k, _)| *k == key) {
            Some((k, v)) => out.push_str(&format!("{k} = {v}\n")),
            None => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out.push_str(append);
    let path = dir.join("config.toml");
    fs::write(&path, out).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn missing_epsilon_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(config_path("golden.toml")).unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text.replace("epsilon_w = 0.2\n", "")).unwrap();
    let out = dir.path().join("out");
    let o = run_cmd("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epsilon_w"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = keeplora(&["run", "--config", "/does/not/exist.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(keeplora(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(keeplora(&["--help"]).status.code(), Some(0));
}

#[test]
fn minimal_config_runs() {
    let dir = TempDir::new().unwrap();
    let o = run_cmd("run", &config_path("minimal.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(&dir.path().join("grid.csv")).len(), 1);
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("checkpoints/stage_1.klra").exists());
}

#[test]
fn golden_outputs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let o = run_cmd("run", &config_path("golden.toml"), dir.path(), &["--threads", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["grid.csv", "metrics.csv", "zero_shot.csv"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(fixture_path(name)).unwrap(),
            "{name}"
        );
    }
    let sums = fs::read_to_string(fixture_path("checkpoints.sha256")).unwrap();
    for line in sums.lines() {
        let (hash, name) = line.split_once("  ").unwrap();
        let bytes = fs::read(dir.path().join("checkpoints").join(name)).unwrap();
        assert_eq!(sha256_hex(&bytes), hash, "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["stream_fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[("epochs_per_task", "3")], false, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_cmd("run", &cfg, &a, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_cmd("run", &cfg, &b, &["--threads", "4"]).status.code(), Some(0));
    for name in ["grid.csv", "metrics.csv", "zero_shot.csv", "checkpoints/stage_5.klra"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[("epochs_per_task", "1")], false, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_cmd("run", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run_cmd("run", &cfg, &b, &["--seed-override", "9"]).status.code(), Some(0));
    assert_ne!(fs::read(a.join("grid.csv")).unwrap(), fs::read(b.join("grid.csv")).unwrap());
}

#[test]
fn ablation_has_six_rows_relative_to_vanilla() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[("epochs_per_task", "2")], false, "");
    let o = run_cmd("ablation", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("ablation.csv"));
    assert_eq!(rows.len(), 6);
    let vanilla = rows.iter().find(|r| r[0] == "vanilla_lora").unwrap();
    for cell in &vanilla[4..7] {
        assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
    }
    assert!(dir.path().join("ablation_manifest.json").exists());
}

#[test]
fn heatmap_shape_and_untrained_zeros() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[("epochs_per_task", "2")], false, "");
    assert_eq!(run_cmd("heatmap", &cfg, dir.path(), &[]).status.code(), Some(0));
    for name in ["heatmap.csv", "heatmap_raw.csv"] {
        let rows = csv_rows(&dir.path().join(name));
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.len() == 5));
    }
    let max = csv_rows(&dir.path().join("heatmap.csv"))[..5]
        .iter()
        .flatten()
        .map(|c| c.parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert_eq!(max, 1.0);

    let idle_dir = TempDir::new().unwrap();
    let idle = variant_config(idle_dir.path(), &[("epochs_per_task", "0")], false, "");
    assert_eq!(run_cmd("heatmap", &idle, idle_dir.path(), &[]).status.code(), Some(0));
    for r in csv_rows(&idle_dir.path().join("heatmap_raw.csv")) {
        assert!(r.iter().all(|c| c.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn full_rank_spectra_match_zero_shot() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[], true, "\n[spectra]\nlayer = 1\nks = [64]\n");
    assert_eq!(run_cmd("spectra", &cfg, dir.path(), &[]).status.code(), Some(0));
    let spectra = csv_rows(&dir.path().join("spectra.csv"));
    let zero = csv_rows(&fixture_path("zero_shot.csv"));
    assert_eq!(spectra.len(), 5);
    for (s, z) in spectra.iter().zip(&zero) {
        assert_eq!(s[1], format!("task_{}", z[0]));
        assert_eq!(s[2].parse::<f64>().unwrap(), z[1].parse::<f64>().unwrap());
    }

    let planted = TempDir::new().unwrap();
    let o = run_cmd("spectra", &config_path("golden.toml"), planted.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(&planted.path().join("spectra.csv")).len(), 64);

    let bad = TempDir::new().unwrap();
    let cfg = variant_config(bad.path(), &[], true, "\n[spectra]\nlayer = 7\n");
    assert_eq!(run_cmd("spectra", &cfg, bad.path(), &[]).status.code(), Some(1));
}

#[test]
fn plasticity_rows_are_consistent() {
    let dir = TempDir::new().unwrap();
    let cfg = variant_config(dir.path(), &[("epochs_per_task", "2")], false, "");
    let o = run_cmd("plasticity", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("plasticity.csv"));
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let v: Vec<f64> = r[2..].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(v[2], v[0] - v[1]);
    }
    // the first task sees the same data and seeds alone or in sequence
    for variant in ["keeplora", "vanilla_lora"] {
        let first = rows.iter().find(|r| r[0] == variant && r[1] == "task_1").unwrap();
        assert_eq!(first[4].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn failures_leave_no_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(config_path("golden.toml")).unwrap();
    let cfg = dir.path().join("diverge.toml");
    fs::write(&cfg, text.replace("lr = 0.1", "lr = 1e300").replace("\"tanh\"", "\"none\"")).unwrap();
    let out = dir.path().join("out");
    let o = run_cmd("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_keeplora"))
        .args(["run", "--config", config_path("minimal.toml").to_str().unwrap()])
        .env("KEEPLORA_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("grid.csv").exists());
}

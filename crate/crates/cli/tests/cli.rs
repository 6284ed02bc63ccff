use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gbs_core::dataset::{CountDataset, Provenance};
use gbs_core::gcd::Partition;
use gbs_core::suite::sample_gcd;
use serde_json::Value;

fn gbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbs")).args(args).output().expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path, r: &[f64], detector: &str, samples: usize) -> PathBuf {
    let m = r.len();
    let cfg = serde_json::json!({
        "config_version": 1,
        "instance": {
            "r": r,
            "epsilon": vec![0.0; m],
            "transmission": {"haar": {"modes": m, "loss": 0.4, "seed": 11}},
            "t": 1.0
        },
        "sampler": {"samples": samples, "seed": 5, "eta_max": 6, "detector": detector, "c_max": 3, "block_size": 1024},
        "validation": {"tests": ["total_gcd", "gcd2d", "marginals"], "marginal_orders": [1, 2], "subset_seed": 2}
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn sample_is_reproducible_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 6], "threshold", 3000);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(out), "sample"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = std::fs::read(a.join("samples.txt")).unwrap();
    assert_eq!(first, std::fs::read(b.join("samples.txt")).unwrap());
    let data = CountDataset::read_file(&a.join("samples.txt"), Provenance::Experiment).unwrap();
    assert_eq!((data.len(), data.modes()), (3000, 6));
    let meta = read_json(&a.join("samples.json"));
    assert_eq!(meta["samples"], 3000);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["out_of_range"].as_array().unwrap().len(), 7);
}

#[test]
fn thread_count_does_not_change_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 4], "pnr", 2500);
    let mut files = vec![];
    for threads in ["1", "2"] {
        let out = dir.path().join(threads);
        let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "--threads", threads, "sample"]);
        assert!(o.status.success());
        files.push(std::fs::read(out.join("samples.txt")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn vacuum_oracle_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.0; 3], "threshold", 100);
    let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(dir.path()), "oracle", "--pattern", "000"]);
    assert!(o.status.success());
    let p = read_json(&dir.path().join("oracle.json"))["probability"].as_f64().unwrap();
    assert!((p - 1.0).abs() < 1e-14, "{p}");
}

#[test]
fn single_mode_no_click_is_sech_r() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "config_version": 1,
        "instance": {"r": [0.5], "epsilon": [0.0], "transmission": {"identity": {"modes": 1}}, "t": 1.0},
        "sampler": {"samples": 100, "seed": 1, "eta_max": 2, "detector": "threshold", "c_max": 1, "block_size": 64}
    });
    let path = dir.path().join("one.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = gbs(&["--config", path_arg(&path), "--out", path_arg(dir.path()), "oracle", "--pattern", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = read_json(&dir.path().join("oracle.json"))["probability"].as_f64().unwrap();
    assert!((p - 1.0 / 0.5f64.cosh()).abs() < 1e-14, "{p}");
}

#[test]
fn gcd_file_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.6; 4], "threshold", 4000);
    let out = dir.path().join("o");
    assert!(gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "sample"]).status.success());
    let data_path = out.join("samples.txt");
    let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "gcd", "--data", path_arg(&data_path), "--partition", "0,1;2,3"]);
    assert!(o.status.success());
    let data = CountDataset::read_file(&data_path, Provenance::Experiment).unwrap();
    let part = Partition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
    let lib = sample_gcd(&data, &part, 4).unwrap();
    assert_eq!(std::fs::read_to_string(out.join("gcd.csv")).unwrap(), lib.to_csv());
    assert_eq!(std::fs::read_to_string(out.join("gcd.json")).unwrap(), lib.to_json() + "\n");
}

#[test]
fn validate_round_trip_against_own_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 6], "threshold", 12_000);
    let out = dir.path().join("o");
    assert!(gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "sample"]).status.success());
    let data = out.join("samples.txt");
    let truth = format!("counts:{}", data.display());
    let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "validate", "--data", path_arg(&data), "--truth", &truth]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    let tests = report["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 4);
    for t in tests {
        assert!(t["chi2"].as_f64().unwrap().abs() < 1e-9, "{t}");
    }
    assert_eq!(report["metadata"]["config_sha256"], read_json(&out.join("samples.json"))["config_sha256"]);
    assert!(out.join("total_gcd.csv").exists() && out.join("gcd2d.csv").exists());
    assert_eq!(std::fs::read_to_string(out.join("tests.csv")).unwrap().lines().count(), 5);
}

#[test]
fn small_dataset_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 4], "threshold", 500);
    let out = dir.path().join("o");
    assert!(gbs(&["--config", path_arg(&cfg), "--out", path_arg(&out), "sample"]).status.success());
    let data = out.join("samples.txt");
    let args = ["--config", path_arg(&cfg), "--out", path_arg(&out), "validate", "--data", path_arg(&data)];
    assert_eq!(gbs(&args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--override-min-n");
    let o = gbs(&forced);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 4], "threshold", 500);
    let data = dir.path().join("empty.txt");
    std::fs::write(&data, "#gbs-counts v1 detector=threshold modes=4 cmax=1\n").unwrap();
    let o = gbs(&["--config", path_arg(&cfg), "--out", path_arg(dir.path()), "validate", "--data", path_arg(&data), "--override-min-n"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configs_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[0.5; 4], "threshold", 500);
    let mut v = read_json(&cfg);
    v["config_version"] = 2.into();
    let bad = dir.path().join("v2.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(gbs(&["--config", path_arg(&bad), "sample"]).status.code(), Some(2));
    v["config_version"] = 1.into();
    v["sampler"]["typo"] = 1.into();
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(gbs(&["--config", path_arg(&bad), "sample"]).status.code(), Some(2));
    v["sampler"].as_object_mut().unwrap().remove("typo");
    v["instance"]["r"] = serde_json::json!([0.5, -0.1, 0.5, 0.5]);
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(gbs(&["--config", path_arg(&bad), "--out", path_arg(dir.path()), "sample"]).status.code(), Some(2));
    assert_eq!(gbs(&["sample"]).status.code(), Some(2));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
topology = cresco8-ft
nodes = 16
victim.collective = allgather
vector_bytes = 32KiB
aggressor.pattern = incast
iterations = 8
warmup = 1
seed = 11

[sweep]
nodes = 16
vector_bytes = 16KiB, 32KiB
bursts = 2c
idle_gaps = 5us, 50us
";

fn fabsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fabsim")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.conf");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        let o = fabsim(&["run", "--config", &cfg, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let x = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(x, fs::read(b.join("results.csv")).unwrap());
    assert!(String::from_utf8(x).unwrap().lines().count() == 2);
    let meta = fs::read_to_string(a.join("results.meta")).unwrap();
    assert!(meta.contains("default: largest victim vector"), "{meta}");
}

#[test]
fn seed_flag_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let out = d.path().join("o");
    let o = fabsim(&["baseline", "--config", &cfg, "--seed", "99", "--out", s(&out)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",99"), "{csv}");
}

#[test]
fn baseline_leaves_congested_columns_empty() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let out = d.path().join("o");
    assert!(fabsim(&["baseline", "--config", &cfg, "--out", s(&out)]).status.success());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let col = |n: &str| row[header.iter().position(|h| *h == n).unwrap()];
    assert_eq!(col("congested_mean_ns"), "");
    assert_eq!(col("ratio"), "");
    assert!(col("baseline_mean_ns").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn invalid_config_exits_2_without_output() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    for bad in [
        CONFIG.replace("nodes = 16\nvictim", "nodes = 16\nnodes = 8\nvictim"),
        CONFIG.replace("aggressor.pattern = incast", "aggressor.pattern = tornado"),
        CONFIG.replace("iterations = 8", "iterations = 8\nfabric.latency = 0ns"),
        CONFIG.replace("idle_gaps = 5us, 50us", "idle_gaps = 5"),
    ] {
        let cfg = write_config(d.path(), &bad);
        let o = fabsim(&["run", "--config", &cfg, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(2), "{bad}\n{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
        assert!(!out.join("results.csv").exists());
    }
}

#[test]
fn missing_config_is_io_error() {
    let d = tempfile::tempdir().unwrap();
    let o = fabsim(&["run", "--config", s(&d.path().join("nope.conf"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn resumed_sweep_matches_uninterrupted() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let (full, part) = (d.path().join("full"), d.path().join("part"));
    assert!(fabsim(&["sweep", "--config", &cfg, "--out", s(&full)]).status.success());

    let o = fabsim(&["sweep", "--config", &cfg, "--out", s(&part), "--max-cells", "1"]);
    assert!(o.status.success());
    // a second invocation without --resume or --fresh is refused
    assert_eq!(fabsim(&["sweep", "--config", &cfg, "--out", s(&part)]).status.code(), Some(3));
    let o = fabsim(&["sweep", "--config", &cfg, "--out", s(&part), "--resume", "--max-cells", "2"]);
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_fabsim"))
        .args(["sweep", "--config", &cfg, "--out", s(&part), "--resume"])
        .env("RUST_LOG", "info")
        .env("FABSIM_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulated 1 cells"));

    assert_eq!(
        fs::read_to_string(full.join("results.csv")).unwrap(),
        fs::read_to_string(part.join("results.csv")).unwrap()
    );
}

#[test]
fn corrupted_manifest_requires_fresh() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let out = d.path().join("o");
    assert!(fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--max-cells", "2"]).status.success());
    let man = out.join("manifest");
    let good = fs::read_to_string(&man).unwrap();

    fs::write(&man, format!("{good}done 9\n")).unwrap();
    let o = fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--resume"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--fresh"));

    // manifest claims a cell whose row never reached the CSV
    fs::write(&man, format!("{good}done 3\n")).unwrap();
    assert_eq!(fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--resume"]).status.code(), Some(3));

    // a different config has a different digest
    fs::write(&man, &good).unwrap();
    let other = write_config(d.path(), &CONFIG.replace("seed = 11", "seed = 12"));
    assert_eq!(fabsim(&["sweep", "--config", &other, "--out", s(&out), "--resume"]).status.code(), Some(3));

    let o = fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--fresh"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 5);
}

#[test]
fn heatmap_of_partial_grid_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let out = d.path().join("o");
    assert!(fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--max-cells", "3"]).status.success());
    let csv = out.join("results.csv");
    let o = fabsim(&["report", "heatmap", "--input", s(&csv), "--x", "idle_gap", "--y", "vector", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("heatmap.svg").exists());

    assert!(fabsim(&["sweep", "--config", &cfg, "--out", s(&out), "--resume"]).status.success());
    let o = fabsim(&["report", "heatmap", "--input", s(&csv), "--x", "idle_gap", "--y", "vector", "--out", s(&out)]);
    assert!(o.status.success());
    let svg = fs::read_to_string(out.join("heatmap.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn trace_and_timeseries() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), CONFIG);
    let out = d.path().join("o");
    assert!(fabsim(&["baseline", "--config", &cfg, "--out", s(&out), "--trace", "2us"]).status.success());
    let trace = out.join("trace.csv");
    let o = fabsim(&["report", "timeseries", "--input", s(&trace), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("cov"));
    assert!(out.join("timeseries.svg").exists());

    assert_eq!(fabsim(&["run", "--config", &cfg, "--trace", "2"]).status.code(), Some(2));
}

#[test]
fn presets_list_names_every_fabric() {
    let o = fabsim(&["presets", "list"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for p in ["haicgu-sw", "nanjing-ls", "cresco8-ft", "leonardo-dfp", "lumi-df"] {
        assert!(text.contains(p), "{p}");
    }
}

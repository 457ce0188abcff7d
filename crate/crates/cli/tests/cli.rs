use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oocchol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oocchol")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = oocchol(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// The error object is the last stderr line (log lines may precede it).
fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {stderr}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn factor_report(dir: &Path, name: &str, extra: &[&str]) -> Value {
    let report = dir.join(name);
    let mut args = vec!["factor", "--report", report.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
    read_json(&report)
}

#[test]
fn fp64_report_meets_residual_bound() {
    let dir = tempfile::tempdir().unwrap();
    let r = factor_report(
        dir.path(),
        "r.json",
        &["--n", "256", "--nb", "64", "--precision-mode", "fp64", "--variant", "V3", "--devices", "1"],
    );
    let residual = r["residual"].as_f64().unwrap();
    assert!(residual <= 10.0 * 256.0 * 2f64.powi(-53), "{residual}");
    assert_eq!(r["kernel_counts"]["POTRF"], 4);
    assert_eq!(r["flop_count"].as_f64().unwrap(), 256f64.powi(3) / 3.0);
    let per_device = r["per_device"].as_array().unwrap();
    assert_eq!(per_device.len(), 1);
    assert_eq!(per_device[0]["g2c_bytes"], r["g2c_bytes"]);
}

#[test]
fn four_precision_report_lists_four_keys() {
    let dir = tempfile::tempdir().unwrap();
    let r = factor_report(
        dir.path(),
        "r.json",
        &["--n", "512", "--nb", "64", "--precision-mode", "4p", "--eps-target", "1e-5"],
    );
    let counts = r["tile_counts"].as_object().unwrap();
    let keys: Vec<_> = counts.keys().cloned().collect();
    assert_eq!(keys, ["FP16", "FP32", "FP64", "FP8E4M3"]);
    assert_eq!(counts.values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 36);
    let diag = r["diagonal_tile_counts"].as_object().unwrap();
    assert_eq!(diag["FP64"], 8);
    assert_eq!(diag.values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 8);
}

#[test]
fn capacity_fraction_does_not_change_numerics() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--n", "512", "--nb", "64", "--seed", "9"];
    let small = factor_report(dir.path(), "a.json", &[&common[..], &["--capacity-fraction", "0.25"]].concat());
    let full = factor_report(dir.path(), "b.json", &[&common[..], &["--capacity-fraction", "1.0"]].concat());
    assert_eq!(small["residual"], full["residual"]);
    assert_eq!(small["loglik"], full["loglik"]);
    assert_eq!(small["g2c_bytes"], full["g2c_bytes"]);
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--n", "384", "--nb", "64", "--streams", "1", "--devices", "2", "--precision-mode", "3p"];
    let mut a = factor_report(dir.path(), "a.json", &args);
    let mut b = factor_report(dir.path(), "b.json", &args);
    for r in [&mut a, &mut b] {
        let o = r.as_object_mut().unwrap();
        o.remove("wall_seconds");
        o.remove("effective_gflops");
    }
    assert_eq!(a, b);
}

#[test]
fn trace_and_ledger_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let ledger = dir.path().join("ledger.jsonl");
    let r = factor_report(
        dir.path(),
        "r.json",
        &[
            "--n",
            "256",
            "--nb",
            "64",
            "--devices",
            "2",
            "--trace",
            trace.to_str().unwrap(),
            "--ledger",
            ledger.to_str().unwrap(),
        ],
    );
    let events: Vec<Value> =
        std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for key in ["kind", "row", "col", "dev", "stream", "t0", "t1", "prec"] {
        assert!(events.iter().all(|e| e.get(key).is_some()), "missing {key}");
    }
    let kernels = events.iter().filter(|e| !matches!(e["kind"].as_str(), Some("C2G" | "G2C"))).count();
    assert_eq!(kernels, 4 + 6 + 6 + 4);
    let moved: u64 = std::fs::read_to_string(&ledger)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["bytes"].as_u64().unwrap())
        .sum();
    assert_eq!(moved, r["total_bytes"].as_u64().unwrap());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n": 256, "nb": 64, "variant": "V1", "devices": 2}"#).unwrap();
    let r = factor_report(dir.path(), "r.json", &["--config", cfg.to_str().unwrap(), "--variant", "V2"]);
    assert_eq!(r["variant"], "V2");
    assert_eq!(r["devices"], 2);
    assert_eq!(r["n"], 256);
}

#[test]
fn errors_are_json_objects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n": 256, "tile": 64}"#).unwrap();
    let out = oocchol(&["factor", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "Malformed");

    let out = oocchol(&["factor", "--n", "256", "--nb", "64", "--capacity-bytes", "1000"]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "ConfigInfeasible");

    let out = oocchol(&["factor", "--n", "64", "--nb", "32", "--theta", "1,0.1,0.7"]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "UnsupportedSmoothness");

    let out = oocchol(&["factor", "--theta", "1,0.1"]);
    assert_eq!(error_kind(&out), "InvalidParameter");
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn sweep(dir: &Path, spec: &str) -> (Output, Vec<String>, Vec<Vec<String>>) {
    let cfg = dir.join("sweep.json");
    let csv = dir.join("out.csv");
    std::fs::write(&cfg, spec).unwrap();
    let out = oocchol(&["sweep", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    let (h, rows) = read_csv(&csv);
    (out, h, rows)
}

#[test]
fn sweep_over_variants_orders_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (out, header, rows) = sweep(
        dir.path(),
        r#"{"base": {"n": 1024, "nb": 128, "capacity_fraction": 0.25, "streams_per_device": 1},
            "axes": {"variant": ["Async", "V1", "V2", "V3"]}}"#,
    );
    assert!(out.status.success());
    assert_eq!(
        &header[..11],
        ["n", "nb", "variant", "devices", "eps_target", "theta", "c2g", "g2c", "total_bytes", "kl", "wall_seconds"]
    );
    let col = header.iter().position(|h| h == "total_bytes").unwrap();
    let bytes: Vec<u64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    assert_eq!(bytes.len(), 4);
    assert!(bytes.windows(2).all(|w| w[1] <= w[0]), "{bytes:?}");
    assert!(bytes[3] < bytes[0]);
}

#[test]
fn sweep_over_eps_reduces_kl_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    let (out, header, rows) = sweep(
        dir.path(),
        r#"{"base": {"n": 1024, "nb": 64, "precision_mode": "4p"}, "axes": {"eps_target": [1e-5, 1e-8]}}"#,
    );
    assert!(out.status.success());
    let col = header.iter().position(|h| h == "kl").unwrap();
    let kl: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    assert!(kl.iter().all(|k| k.is_finite()));
    assert!(kl[1].abs() <= kl[0].abs(), "{kl:?}");
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let (out, header, rows) = sweep(dir.path(), r#"{"axes": {"n": []}}"#);
    assert!(out.status.success());
    assert_eq!(header[0], "n");
    assert!(rows.is_empty());
}

#[test]
fn failing_sweep_rows_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (out, header, rows) = sweep(
        dir.path(),
        r#"{"base": {"n": 256, "nb": 64}, "axes": {"theta": [[1.0, 0.1, 0.5], [1.0, 0.1, 0.7], [1.0, 0.05, 1.5]]}}"#,
    );
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "SweepIncomplete");
    let status = header.iter().position(|h| h == "status").unwrap();
    let got: Vec<&str> = rows.iter().map(|r| r[status].as_str()).collect();
    assert_eq!(got, ["ok", "error:UnsupportedSmoothness", "ok"]);
}

fn glyphs(text: &str, c: char) -> usize {
    text.lines().filter(|l| !l.contains(':')).flat_map(str::chars).filter(|&g| g == c).count()
}

#[test]
fn render_map_of_uniform_map() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("m.json");
    ok(&[
        "factor",
        "--n",
        "256",
        "--nb",
        "64",
        "--precision-map",
        map.to_str().unwrap(),
        "--report",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    let ppm = dir.path().join("m.ppm");
    let out = ok(&["render-map", map.to_str().unwrap(), "--ppm", ppm.to_str().unwrap(), "--cell", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("#\n##\n###\n####\n"), "{text}");
    assert_eq!(glyphs(&text, '#'), 10);
    let img = std::fs::read(&ppm).unwrap();
    assert!(img.starts_with(b"P6\n8 8\n255\n"));
    assert_eq!(img.len(), b"P6\n8 8\n255\n".len() + 8 * 8 * 3);
}

#[test]
fn render_map_fp8_glyphs_track_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let mut fp8 = Vec::new();
    for range in ["0.02627", "0.210158"] {
        let map = dir.path().join(format!("{range}.json"));
        let theta = format!("1,{range},0.5");
        ok(&[
            "factor",
            "--n",
            "2048",
            "--nb",
            "128",
            "--precision-mode",
            "4p",
            "--eps-target",
            "1e-5",
            "--theta",
            &theta,
            "--precision-map",
            map.to_str().unwrap(),
            "--report",
            dir.path().join("r.json").to_str().unwrap(),
        ]);
        let out = ok(&["render-map", map.to_str().unwrap()]);
        fp8.push(glyphs(&String::from_utf8(out.stdout).unwrap(), '.'));
    }
    assert!(fp8[0] > fp8[1], "{fp8:?}");
}

#[test]
fn render_map_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("m.json");
    std::fs::write(&map, r#"{"Nt": 2, "eps_target": 1e-5, "tiles": [{"row": 0, "col": 0, "prec": "FP64"}]}"#).unwrap();
    let out = oocchol(&["render-map", map.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "Malformed");
}

#[test]
fn gen_outputs_round_trip_through_factor() {
    let dir = tempfile::tempdir().unwrap();
    let locs = dir.path().join("locs.csv");
    let dump = dir.path().join("a.bin");
    ok(&[
        "gen",
        "--n",
        "100",
        "--nb",
        "32",
        "--seed",
        "5",
        "--locations",
        locs.to_str().unwrap(),
        "--matrix-out",
        dump.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&locs).unwrap();
    assert_eq!(text.lines().next(), Some("x,y"));
    assert_eq!(text.lines().count(), 101);
    let from_dump =
        factor_report(dir.path(), "a.json", &["--matrix", dump.to_str().unwrap(), "--n", "100", "--nb", "32"]);
    let generated = factor_report(dir.path(), "b.json", &["--n", "100", "--nb", "32", "--seed", "5"]);
    assert_eq!(from_dump["loglik"], generated["loglik"]);
    assert_eq!(from_dump["residual"], generated["residual"]);

    let out = oocchol(&["gen", "--n", "10"]);
    assert!(!out.status.success());
}

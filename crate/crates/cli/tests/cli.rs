use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexagg::uncertainty::{sample_gmm, Gmm};
use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn flexagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexagg")).args(args).output().expect("binary runs")
}

fn bundled(cmd: &str, out: &Path) -> Vec<String> {
    let cfg = data("config.toml");
    vec![cmd.into(), "--config".into(), cfg.display().to_string(), "--out".into(), out.display().to_string()]
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    flexagg(&refs)
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"))
}

fn schema_check(schema: &str, doc: &Path) {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(data(&format!("schema/{schema}"))).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: Value = serde_json::from_str(&std::fs::read_to_string(doc).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", doc.display());
}

#[test]
fn full_day_writes_48_regions() {
    let dir = TempDir::new().unwrap();
    let out = run(&bundled("region", dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let regions: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("region_") && n.ends_with(".json"))
        .collect();
    assert_eq!(regions.len(), 48);
    assert!(dir.path().join("region_0000.svg").exists());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 49);
    for name in ["region_0000.json", "region_1200.json", "region_1930.json"] {
        schema_check("region.schema.json", &dir.path().join(name));
    }
}

#[test]
fn region_output_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let mut args = bundled("region", d.path());
        args.extend(["--times".into(), "12:00,19:00".into(), "--k".into(), "16".into()]);
        assert!(run(&args).status.success());
    }
    for f in ["region_1200.json", "region_1900.json", "summary.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn too_few_directions_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--k".into(), "2".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn bad_risk_level_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--eps-v".into(), "1.5".into()]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--feeder".into(), "/nonexistent/feeder.json".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("no such file"));
}

#[test]
fn unknown_config_key_reports_offset() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "k = 16\nwind = true\n").unwrap();
    let out = flexagg(&["inspect", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "parse");
    assert_eq!(e["error"]["byte_offset"], 7);
}

#[test]
fn invalid_feeder_lists_diagnostics() {
    let dir = TempDir::new().unwrap();
    let mut net: Value = serde_json::from_str(&std::fs::read_to_string(data("feeder_25.json")).unwrap()).unwrap();
    net["lines"][2]["to_bus"] = "nowhere".into();
    let path = dir.path().join("feeder.json");
    std::fs::write(&path, net.to_string()).unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--feeder".into(), path.display().to_string(), "--times".into(), "12:00".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "network");
    assert!(!e["error"]["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn validate_reports_rates_within_risk() {
    let dir = TempDir::new().unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--times".into(), "19:00".into(), "--k".into(), "8".into()]);
    assert!(run(&args).status.success());
    let region = dir.path().join("region_1900.json");
    let mut args = bundled("validate", dir.path());
    args.extend(["--region".into(), region.display().to_string(), "--samples".into(), "300".into()]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report_path = dir.path().join("validation_1900.json");
    schema_check("validation.schema.json", &report_path);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["vertices"].as_array().unwrap().len(), 8);
    for v in report["vertices"].as_array().unwrap() {
        assert!(v["report"]["max_voltage_rate"].as_f64().unwrap() <= 0.05);
    }
}

#[test]
fn corrupted_region_reports_byte_offset() {
    let dir = TempDir::new().unwrap();
    let region = dir.path().join("region.json");
    std::fs::write(&region, "{\"time\": \"12:00\",\n \"k_total\": 8,,\n}").unwrap();
    let mut args = bundled("validate", dir.path());
    args.extend(["--region".into(), region.display().to_string()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "parse");
    assert_eq!(e["error"]["byte_offset"], 32);
}

#[test]
fn region_without_decisions_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut args = bundled("region", dir.path());
    args.extend(["--times".into(), "12:00".into(), "--k".into(), "4".into()]);
    assert!(run(&args).status.success());
    let path = dir.path().join("region_1200.json");
    let mut poly: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    poly["vertex_info"][1]["decision"] = Value::Null;
    std::fs::write(&path, poly.to_string()).unwrap();
    let mut args = bundled("validate", dir.path());
    args.extend(["--region".into(), path.display().to_string(), "--samples".into(), "10".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "input");
    assert!(e["error"]["message"].as_str().unwrap().contains("[1]"));
}

#[test]
fn fit_errors_on_single_gaussian_history() {
    let dir = TempDir::new().unwrap();
    let hist = dir.path().join("history.csv");
    let mut text = String::from("day_type,power_pu,error_pu\n");
    let draws = sample_gmm(&Gmm::gaussian(0.02, 0.0025).unwrap(), 600, 7);
    for (i, e) in draws.iter().enumerate() {
        text.push_str(&format!("cloudy,{},{e}\n", 0.55 + 0.0001 * (i % 10) as f64));
    }
    std::fs::write(&hist, text).unwrap();
    let out = flexagg(&["fit-errors", "--errors", hist.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--k-max", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    schema_check("error_table.schema.json", &dir.path().join("error_table.json"));
    let table: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("error_table.json")).unwrap()).unwrap();
    let entries = table.as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["weights"].as_array().unwrap().len(), 1);
    let scores = std::fs::read_to_string(dir.path().join("error_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 4);
}

#[test]
fn fit_errors_on_empty_history() {
    let dir = TempDir::new().unwrap();
    let hist = dir.path().join("history.csv");
    std::fs::write(&hist, "day_type,power_pu,error_pu\n").unwrap();
    let out = flexagg(&["fit-errors", "--errors", hist.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("no samples"));
}

#[test]
fn inspect_summarizes_inputs() {
    let dir = TempDir::new().unwrap();
    let out = run(&bundled("inspect", dir.path()));
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["feeder"]["buses"], 25);
    assert_eq!(v["profiles"]["rows"], 288);
    assert!(v["feeder"]["diagnostics"].as_array().unwrap().is_empty());
    assert!(v["errors"].as_array().unwrap().len() >= 3);
}

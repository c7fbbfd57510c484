use std::path::Path;
use std::process::{Command, Output};

fn accelsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accelsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn analyze_forward_total() {
    let o = accelsim(&["analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let total = stdout(&o)
        .lines()
        .find(|l| l.starts_with("total"))
        .unwrap()
        .to_string();
    assert!(total.trim_end().ends_with("1.940"), "{total}");
}

#[test]
fn analyze_one_layer_as_json() {
    let o = accelsim(&[
        "analyze",
        "--layer",
        "2",
        "--strategies",
        "s1,s2",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["layers"][0]["layer"], 2);
    let t = &v["layers"][0]["traffic"];
    for key in [
        "input_bytes",
        "output_bytes",
        "kernel_bytes",
        "conv_ops",
        "normalized_bw",
    ] {
        assert!(t.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn analyze_rejects_layer_zero() {
    let o = accelsim(&["analyze", "--layer", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1-based"));
}

#[test]
fn analyze_empty_network_file() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(
        dir.path(),
        "empty.json",
        r#"{"name": "empty", "batch": 1, "layers": []}"#,
    );
    let o = accelsim(&["analyze", "--net", &net]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stdout(&o).contains("total"));
}

#[test]
fn malformed_network_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(
        dir.path(),
        "bad.json",
        r#"{"name": "bad", "batch": 1, "input_h": 8, "input_w": 8,
            "layers": [{"conv": {"n": 1, "m": 2}}]}"#,
    );
    let o = accelsim(&["analyze", "--net", &net]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("layers[0].conv.k"), "{}", stderr(&o));
}

#[test]
fn simulate_layer2_passes_both_checks() {
    let o = accelsim(&[
        "simulate",
        "--layer",
        "2",
        "--batch",
        "1",
        "--check-against-model",
        "--check-against-reference",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("check_against_model"));
    assert!(out
        .lines()
        .any(|l| l.starts_with("input_bytes") && l.trim_end().ends_with("279936")));
}

#[test]
fn simulate_count_only_rejects_reference_check() {
    let o = accelsim(&["simulate", "--count-only", "--check-against-reference"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identity_toy_dumps_its_input() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(
        dir.path(),
        "identity.json",
        r#"{"name": "identity", "batch": 1, "input_h": 4, "input_w": 4,
            "layers": [{"conv": {"n": 1, "m": 1, "k": 1}, "act": false}]}"#,
    );
    let dump = dir.path().join("out.json");
    let o = accelsim(&[
        "simulate",
        "--net",
        &net,
        "--check-against-model",
        "--check-against-reference",
        "--dump-output",
        dump.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let t = &v["result"]["traffic"];
    assert_eq!(t["input_bytes"], t["output_bytes"]);
    assert_eq!(t["input_bytes"], 64);
    let dumped: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert!(dumped.is_object() || dumped.is_array());
}

#[test]
fn compare_forward_table_passes() {
    let o = accelsim(&["compare", "table3-fp"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("6 of 6 rows pass"));
}

#[test]
fn compare_with_zero_tolerance_fails() {
    let o = accelsim(&["compare", "table3-fp", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn compare_unknown_preset_lists_presets() {
    let o = accelsim(&["compare", "table9"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("table3-fp") && err.contains("fig14"), "{err}");
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = accelsim(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let bad = accelsim(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(
        stderr(&bad).contains("layer 2 kernel[1][0][1][1]"),
        "{}",
        stderr(&bad)
    );
}

#[test]
fn roofline_scales_with_bandwidth() {
    let o = accelsim(&["roofline", "--dram", "19.2e9,0", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    let headers = rows.headers().unwrap().clone();
    assert_eq!(&headers[0], "design");
    let ours: Vec<_> = rows
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[0] == "this design")
        .map(|r| r[3].to_string())
        .collect();
    assert_eq!(ours, ["9.897", "0.000"]);
}

#[test]
fn roofline_rejects_negative_bandwidth() {
    let o = accelsim(&["roofline", "--dram=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = accelsim(&[
            "simulate",
            "--layer",
            "3",
            "--phase",
            "ku",
            "--batch",
            "1",
            "--seed",
            "42",
            "--format",
            "json",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = accelsim(&["analyze", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

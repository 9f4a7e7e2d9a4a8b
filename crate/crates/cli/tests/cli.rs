use std::path::Path;
use std::process::{Command, Output};

fn laps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laps-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn simulate_writes_metrics_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("w.jsonl");
    std::fs::write(
        &trace,
        "{\"session_id\":0,\"turn\":1,\"arrival_ms\":0,\"new_tokens\":64}\n\
         {\"session_id\":1,\"turn\":1,\"arrival_ms\":5,\"new_tokens\":2000}\n\
         {\"session_id\":0,\"turn\":2,\"arrival_ms\":300,\"new_tokens\":40,\"history_tokens\":96}\n",
    )
    .unwrap();
    let out = dir.path().join("d");
    let o = laps(&[
        "simulate",
        "--config",
        &configs("baseline.conf"),
        "--workload",
        trace.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["overall"]["count"], 3);
    let log = std::fs::read_to_string(out.join("events.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\tarrival\t")).count(), 3);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = laps(&[
            "simulate",
            "--config",
            &configs("disaggregation.conf"),
            "--duration-ms",
            "5000",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        (
            std::fs::read(out.join("metrics.json")).unwrap(),
            std::fs::read(out.join("events.log")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn sweep_emits_one_sorted_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            "--config".into(),
            configs("interference.conf"),
            "--duration-ms".into(),
            "3000".into(),
            "--param".into(),
            "short_concurrency".into(),
            "--values".into(),
            "64,1,2,4,8,16,32".into(),
            "--out".into(),
            dir.path().join(out).display().to_string(),
        ]
    };
    let read = |out: &str| {
        let a = args(out);
        let o = laps(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out).join("sweep.csv")).unwrap()
    };
    let csv = read("a");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[0].starts_with("param,value,overall_count"));
    let values: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["1", "2", "4", "8", "16", "32", "64"]);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    assert_eq!(csv, read("b"));
}

#[test]
fn oracle_prints_wait_and_penalty() {
    let o = laps(&[
        "oracle",
        "--lambda",
        "0.25",
        "--p-short",
        "0.5",
        "--s-short",
        "1",
        "--s-long",
        "3",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("W = 1.25"), "{text}");
    assert!(text.contains("dW = 0.25"), "{text}");
}

#[test]
fn oracle_rejects_unstable_load() {
    let o = laps(&[
        "oracle",
        "--lambda",
        "1",
        "--p-short",
        "0.5",
        "--s-short",
        "1",
        "--s-long",
        "3",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn fit_recovers_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.jsonl");
    let (a, b, gw, gr) = (1e-5, 0.02, 0.03, 0.005);
    let mut text = String::new();
    for (l, h) in [
        (16u32, 0u32),
        (128, 512),
        (512, 64),
        (1024, 4096),
        (2048, 0),
        (300, 9000),
    ] {
        let (lf, hf) = (l as f64, h as f64);
        let comp = a * lf * (lf + 2.0 * hf) + b * lf;
        let mem = gw * lf + gr * hf;
        text += &format!("{{\"new_tokens\":{l},\"history_tokens\":{h},\"t_comp\":{comp},\"t_mem\":{mem}}}\n");
    }
    std::fs::write(&path, text).unwrap();
    let o = laps(&["fit", "--samples", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let get = |k: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    for (k, want) in [
        ("cost.alpha", a),
        ("cost.beta", b),
        ("cost.gamma_w", gw),
        ("cost.gamma_r", gr),
    ] {
        assert!((get(k) - want).abs() / want < 1e-6, "{k}: {}", get(k));
    }
}

#[test]
fn unknown_flag_fails_with_usage() {
    let o = laps(&["simulate", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_config_is_an_error() {
    let o = laps(&["simulate", "--config", "/nonexistent/x.conf"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("x.conf"));
}

#[test]
fn validate_single_criterion() {
    let o = laps(&["validate", "--only", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS] 10"));
}

use std::path::Path;
use std::process::{Command, Output};

fn tpcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpcsim")).args(args).output().unwrap()
}

fn scenario(dir: &Path, name: &str, policy: &str) -> String {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(
        &path,
        format!(
            r#"
name = "{name}"
horizon_ms = 200
warmup_ms = 20
policy = "{policy}"

[[apps]]
name = "hp"
priority = "hp"
tpc_quota = 36
slo = {{ latency_ms = 10.0 }}
arrival = {{ type = "poisson", rate_rps = 80 }}
model = {{ synth = {{ layers = 3, blocks = {{ choice = [64, 256] }}, block_us = {{ uniform = [50, 200] }}, sensitivity = {{ uniform = [0.2, 1.0] }}, occupancy = {{ choice = [2, 4] }}, seed = 3 }} }}

[[apps]]
name = "be"
priority = "be"
tpc_quota = 18
arrival = {{ type = "closed_loop" }}
model = {{ synth = {{ layers = 2, blocks = 432, block_us = {{ uniform = [400, 800] }}, sensitivity = {{ uniform = [0.1, 0.5] }}, occupancy = 4, seed = 4 }} }}
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_report_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "mix", "full_system");
    let out = dir.path().join("out");
    let stdout = ok(&tpcsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]));
    assert!(stdout.contains("full_system"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("mix.report.json")).unwrap()).unwrap();
    assert_eq!(report["apps"].as_array().unwrap().len(), 2);
    let requests = std::fs::read_to_string(out.join("mix.requests.jsonl")).unwrap();
    assert!(requests.lines().count() > 0);
    for line in requests.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(out.join("mix.predictions.jsonl").exists());
}

#[test]
fn same_seed_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "mix", "full_system");
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        ok(&tpcsim(&["run", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]));
        std::fs::read(out.join("mix.report.json")).unwrap()
    };
    assert_eq!(read("a", "9"), read("b", "9"));
    assert_ne!(read("a", "9"), read("c", "10"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "horizon_ms = -5\n").unwrap();
    let o = tpcsim(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let o = tpcsim(&["run", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_are_listed_and_exported() {
    let stdout = ok(&tpcsim(&["presets"]));
    for name in ["fig7", "inf-inf", "inf-train", "rightsize-inf", "rightsize-mixed", "dvfs"] {
        assert!(stdout.contains(name), "{name} missing");
    }
    let dir = tempfile::tempdir().unwrap();
    ok(&tpcsim(&["presets", "inf-inf", "--out", dir.path().to_str().unwrap()]));
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert!(files.len() >= 2);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "mix", "full_system");
    let out = dir.path().join("out");
    ok(&tpcsim(&[
        "sweep",
        "--config",
        &cfg,
        "--slip-k",
        "1.0,1.2",
        "--atom-durations",
        "0.5,1,2",
        "--quota",
        "hp=18,36",
        "--out",
        out.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("slip_k"));
    assert_eq!(lines.count(), 2 * 3 * 2);
}

#[test]
fn sweep_rejects_unknown_app() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "mix", "full_system");
    let o = tpcsim(&["sweep", "--config", &cfg, "--quota", "nobody=1,2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_report_covers_fitted_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "mix", "full_system");
    let out = dir.path().join("out");
    ok(&tpcsim(&["fit-report", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let text = std::fs::read_to_string(out.join("fit-report.txt")).unwrap();
    assert!(text.contains("weighted R^2"), "{text}");
    assert!(text.contains("hp ") && text.contains("be "), "{text}");
}

#[test]
fn compare_tabulates_policies() {
    let dir = tempfile::tempdir().unwrap();
    let a = scenario(dir.path(), "full", "full_system");
    let b = scenario(dir.path(), "mps", "mps_like");
    let out = dir.path().join("out");
    let stdout = ok(&tpcsim(&["compare", "--config", &a, &b, "--out", out.to_str().unwrap()]));
    assert!(stdout.contains("mps_like") && stdout.contains("full_system"));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
}

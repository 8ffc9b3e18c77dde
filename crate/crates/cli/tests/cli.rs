use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ionmap"))
}

fn samples() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn map_then_validate_closes_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steane.cmd");
    let circuit = samples().join("steane.qasm");
    let o = run(&["map", "--ulb-n", "2", circuit.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total latency:"));
    let stream = fs::read_to_string(&out).unwrap();
    assert!(stream.contains("# ulb_n: 2"));

    // Circuit and block size come from the stream header.
    let v = run(&["validate", out.to_str().unwrap()]);
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).starts_with("OK"));
}

#[test]
fn map_json_reports_latency_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.cmd");
    let circuit = samples().join("steane.qasm");
    let o = run(&["--format", "json", "map", "--ulb-n", "2", "--fast", circuit.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["latency"].as_u64().unwrap() >= v["lower_bound"].as_u64().unwrap());
    assert_eq!(v["sweep"].as_array().unwrap().len(), 1);
}

#[test]
fn tampered_stream_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.cmd");
    let circuit = samples().join("steane.qasm");
    assert!(run(&["map", "--ulb-n", "2", "--fast", circuit.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(&out).unwrap();
    // Drop the last gate so the circuit is incomplete.
    let mut lines: Vec<&str> = text.lines().collect();
    let k = lines.iter().rposition(|l| l.contains(" CNOT ") || l.contains(" H ")).unwrap();
    lines.remove(k);
    fs::write(&out, lines.join("\n")).unwrap();
    let v = run(&["validate", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).starts_with("FAIL"), "{}", stdout(&v));
}

#[test]
fn size_json_names_the_best_size() {
    let ops = samples().join("ops");
    let workload = samples().join("toffoli.toml");
    let o = run(&["--format", "json", "size", "--workload", workload.to_str().unwrap(), "--sizes", "1,2", ops.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_best"], 2);
    assert_eq!(v["objectives"].as_array().unwrap().len(), 2);
    assert!(v["latencies"]["CNOT"]["2"].is_u64());
    assert!(v["toffoli_cost"]["2"].is_u64());
}

#[test]
fn reports_are_deterministic_across_worker_counts() {
    let ops = samples().join("ops");
    let a = run(&["--jobs", "1", "plotdata", "size", "--sizes", "1,2,3", ops.to_str().unwrap()]);
    let b = run(&["--jobs", "4", "plotdata", "size", "--sizes", "1,2,3", ops.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).starts_with("n,CNOT,H,T,Tdag,routing,objective\n"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[fabric]\nulb_n = 1\n").unwrap();
    let circuit = samples().join("steane.qasm");
    let out = dir.path().join("s.cmd");
    // n=1 has too few creation wells for this circuit.
    let o = run(&["--config", cfg.to_str().unwrap(), "map", circuit.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("NoCreationWell"));
    let o = run(&["--config", cfg.to_str().unwrap(), "map", "--ulb-n", "2", circuit.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn bad_input_exits_nonzero_with_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.qasm");
    fs::write(&bad, "QUBIT q0, 0\nFOO q0\n").unwrap();
    let o = run(&["parse", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[fabric]\nwell_capacity = 1\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "parse", samples().join("steane.qasm").to_str().unwrap()]);
    assert!(!o.status.success());

    assert_eq!(run(&["map"]).status.code(), Some(2));
    assert_eq!(run(&["--format", "yaml", "parse", "x"]).status.code(), Some(2));
}

#[test]
fn schedule_with_oracle_matches_on_small_circuits() {
    let circuit = samples().join("steane.qasm");
    let o = run(&["--format", "json", "schedule", "--oracle", circuit.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for c in v["candidates"].as_array().unwrap() {
        assert!(c["levels"].as_u64() >= c["oracle_levels"].as_u64());
    }
}

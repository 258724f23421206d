use std::path::Path;
use std::process::{Command, Output};

fn clup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clup"))
        .args(args)
        .env_remove("CLUP_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn glitch_prints_the_exchange_snr() {
    let out = clup(&["glitch", "--alpha", "0.6", "--lo", "13", "--hi", "16", "--tol", "0.01"]);
    assert_eq!(out.status.code(), Some(0));
    let snr: f64 = stdout(&out).trim().parse().unwrap();
    assert!((snr - 14.34).abs() <= 0.05, "{snr}");

    let out = clup(&["--format", "json", "glitch", "--alpha", "0.6"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["glitch_snr_db"].as_f64().unwrap() - 14.338).abs() <= 0.05);
}

#[test]
fn glitch_without_exchange_is_a_runtime_failure() {
    let out = clup(&["glitch", "--alpha", "0.8", "--lo", "13", "--hi", "16"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn tables_query_prints_the_three_stationary_rows() {
    let out = clup(&["tables", "--table", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("3,Stat point")));
    assert!(rows[2].contains("0.99987"));

    let out = clup(&["tables", "--table", "99"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("available"));
}

#[test]
fn tables_dump_and_override_path() {
    let out = clup(&["--format", "json", "tables"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 56);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("t.json");
    std::fs::write(&bad, "{\"manifest\": 1}").unwrap();
    let out = clup(&["--tables-path", bad.to_str().unwrap(), "tables"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn stationary_and_theory_curve_csv() {
    let out = clup(&["stationary", "--alpha", "0.6", "--snr", "13"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("c1,xi,d1,d2,kind"));
    assert_eq!(text.lines().filter(|l| l.ends_with("local_min")).count(), 2);

    let out = clup(&["theory-curve", "--snr-lo", "12", "--snr-hi", "16", "--snr-step", "1", "--mode", "high"]);
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("snr_db,c1,xi,branch"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(clup(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(clup(&["glitch", "--bogus"]).status.code(), Some(1));
    assert_eq!(clup(&["--format", "xml", "tables"]).status.code(), Some(1));
    assert_eq!(clup(&["run", "--algorithm", "sphere", "--snr", "13"]).status.code(), Some(1));
    let help = clup(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("sweep"));
    assert_eq!(clup(&["--version"]).status.code(), Some(0));
}

#[test]
fn sweep_of_missing_config_names_the_file() {
    let out = clup(&["sweep", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("missing.json") && err.contains("No such file"), "{err}");
}

#[test]
fn sweep_with_malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"alpha": 0.6, "n": 50, "snr_grid_db": [13], "algorithms": ["clup_r0"], "base_seed": 1, "output_path": "x.json"}"#).unwrap();
    let out = clup(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trials"), "{}", stderr(&out));
}

#[test]
fn unsupported_schedule_fails_before_any_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"alpha": 0.6, "n": 50, "snr_grid_db": [13], "algorithms": ["rephased_r3"], "trials": 1, "base_seed": 1, "output_path": "x.json"}"#).unwrap();
    let out = clup(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("supported"));
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"alpha": 0.6, "n": 60, "snr_grid_db": [13, 15], "algorithms": ["polytope", "rephased_r1"],
            "trials": 3, "base_seed": 5, "output_path": "ignored.json"}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn sweep_writes_report_and_csv_identically_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        // Same output path each time: the report echoes it.
        let report = dir.path().join("out/r.json");
        let out = clup(&["--threads", threads, "--output", report.to_str().unwrap(), "sweep", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
        assert!(csv.starts_with("snr_db,algorithm,trials,bits,bit_errors,p_err_mean,p_err_median,c1_mean,c2_mean,non_convergent,wall_time_s\n"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(stdout(&out), csv);
        outputs.push((std::fs::read(&report).unwrap(), csv));
    }
    assert_eq!(outputs[0], outputs[1]);

    let report: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(report["config"]["base_seed"], 5);
    assert_eq!(report["trials"].as_array().unwrap().len(), 12);
    assert!(report["dataset"]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let report = dir.path().join("r.json");
    let out = clup(&["--seed", "77", "--output", report.to_str().unwrap(), "sweep", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["config"]["base_seed"], 77);
}

#[test]
fn bad_thread_environment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_clup"))
        .args(["--output", dir.path().join("r.json").to_str().unwrap(), "sweep", cfg.to_str().unwrap()])
        .env("CLUP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_prints_a_trajectory_per_phase() {
    let out = clup(&["--seed", "3", "run", "--algorithm", "rephased_r1", "--snr", "13", "--n", "200"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("phase,iteration,c1,c2"));
    assert!(text.lines().any(|l| l.starts_with("1,1,")));
    assert!(stderr(&out).contains("phase 1"));

    let out = clup(&["--format", "json", "run", "--algorithm", "polytope", "--snr", "15", "--n", "100"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["p_err"].as_f64().unwrap() < 0.5);
}

#[test]
fn infeasible_exact_radius_is_a_runtime_failure() {
    // At n = 200 the tabulated radius is below the smallest achievable residual for this seed.
    let out = clup(&["--seed", "0", "run", "--algorithm", "clup_exact", "--snr", "13", "--n", "200"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn output_flag_writes_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = clup(&["--output", path.to_str().unwrap(), "theory-curve", "--snr-lo", "13", "--snr-hi", "13"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).is_empty());
    assert!(std::fs::read_to_string(path).unwrap().starts_with("snr_db,c1,xi,branch\n13,"));
}

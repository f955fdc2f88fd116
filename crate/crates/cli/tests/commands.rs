use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn optrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_in(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![command, "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    optrec(&args)
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_linear_case_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace().join("configs/linear_poisson_1d.json");
    let o = run_in(tmp.path(), "solve", cfg.to_str().unwrap(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/solution.json")).unwrap();
    assert!(text.contains("\"converged\": true"));
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["config"]["case"], "linear_poisson_1d");
    assert_eq!(doc["config"]["kernel"]["lengthscale"], 0.2);
    assert_eq!(
        doc["coeffs"].as_array().unwrap().len(),
        doc["basis"].as_array().unwrap().len()
    );
    assert!(doc["metrics"]["l2"].as_f64().unwrap() < 1e-2);
}

#[test]
fn negative_lengthscale_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"case": "linear_poisson_1d", "kernel": {"lengthscale": -0.5}}"#,
    );
    let o = run_in(tmp.path(), "solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kernel.lengthscale"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_json_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{\n  \"case\": \"linear_poisson_1d\",\n  oops\n}");
    let o = run_in(tmp.path(), "solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"case": "linear_poisson_1d", "solver": {"tolerance": 1}}"#,
    );
    let o = run_in(tmp.path(), "solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("solver"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_input_error() {
    let o = optrec(&["solve", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn contradictory_targets_exit_two_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dirac = r#"{"family": "dirac_point", "point": [0.5], "domain": {"lo": [0.0], "hi": [1.0]}}"#;
    let body = format!(
        r#"{{"case": "linear_poisson_1d", "formulation": "relaxed",
            "measurements": [{{"test_fn": {dirac}, "target": 1.0, "tolerance": 0.0}},
                             {{"test_fn": {dirac}, "target": 2.0, "tolerance": 0.0}}]}}"#
    );
    let cfg = write_config(tmp.path(), "c.json", &body);
    let o = run_in(tmp.path(), "solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/solution.json")).unwrap()).unwrap();
    assert_eq!(doc["converged"], false);
    // best compromise splits the difference
    assert!((doc["report"]["final_constraint_violation"].as_f64().unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn vary_n_study_writes_monotone_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace().join("configs/vary_n.json");
    let o = run_in(tmp.path(), "study", cfg.to_str().unwrap(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/study.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "control,L2,Linf,norm,kkt,violation,converged,seconds"
    );
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 4);
    let l2: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(l2.windows(2).all(|w| w[1] <= w[0]), "{l2:?}");
    assert!(tmp.path().join("out/study.json").exists());
}

#[test]
fn empty_sweep_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"case": "cubic_dirichlet_1d", "study": {"control": "n", "values": []}}"#,
    );
    let o = run_in(tmp.path(), "study", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("out/study.csv").exists());
}

#[test]
fn one_failing_mu_exits_two_with_all_rows() {
    let tmp = tempfile::tempdir().unwrap();
    // stationarity at mu = 1e2 stalls near 1.5e-10, the others reach 8e-11 or better
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"case": "cubic_dirichlet_1d", "formulation": "regularized", "controls": {"n": 10},
            "solver": {"tol_stationarity": 1e-10},
            "study": {"control": "mu", "values": [1e2, 1e4, 1e6, 1e8]}}"#,
    );
    let o = run_in(tmp.path(), "study", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let rows = csv_rows(&fs::read_to_string(tmp.path().join("out/study.csv")).unwrap());
    let flags: Vec<&str> = rows.iter().map(|r| r[6].as_str()).collect();
    assert_eq!(flags, ["false", "true", "true", "true"]);
}

#[test]
fn study_replays_bit_identically_from_embedded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"case": "cubic_dirichlet_1d", "controls": {"layout": "random"},
            "study": {"control": "n", "values": [6, 12]}}"#,
    );
    let first = run_in(tmp.path(), "study", &cfg, &["--seed", "11"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let csv1 = fs::read(tmp.path().join("out/study.csv")).unwrap();
    let doc: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/study.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["solver"]["seed"], 11);

    let replay_dir = tmp.path().join("replay");
    fs::create_dir(&replay_dir).unwrap();
    let embedded = write_config(&replay_dir, "c.json", &doc["config"].to_string());
    let second = run_in(&replay_dir, "study", &embedded, &["--threads", "1"]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(fs::read(replay_dir.join("out/study.csv")).unwrap(), csv1);

    let other = tmp.path().join("other");
    fs::create_dir(&other).unwrap();
    let third = run_in(&other, "study", &cfg, &["--seed", "12"]);
    assert_eq!(third.status.code(), Some(0));
    assert_ne!(fs::read(other.join("out/study.csv")).unwrap(), csv1);
}

#[test]
fn validate_kernel_passes_and_catches_corruption() {
    let cfg = workspace().join("configs/validate_kernel.json");
    let cfg = cfg.to_str().unwrap();
    let ok = optrec(&["validate-kernel", "--config", cfg]);
    assert_eq!(ok.status.code(), Some(0));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(table.matches(" pass").count(), 25, "{table}");

    let bad = optrec(&["validate-kernel", "--config", cfg, "--corrupt-derivative"]);
    assert_eq!(bad.status.code(), Some(2));
    let table = String::from_utf8_lossy(&bad.stdout);
    let failing: Vec<&str> = table.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0].starts_with("neg_laplacian      neg_laplacian"));
}

#[test]
fn published_schema_is_current() {
    let o = optrec(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let published = fs::read_to_string(workspace().join("configs/schema.json")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), published);
}

#[test]
fn example_configs_parse() {
    for entry in fs::read_dir(workspace().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "schema.json" {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        optrec::config::RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

use std::path::Path;
use std::process::{Command, Output};

fn splr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splr"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPLR_SEED")
        .env_remove("SPLR_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

const CHECKERBOARD: &str = r#"
seed = 2
[function]
name = "checkerboard"
[basis]
kind = "piecewise_legendre"
degree = 2
pieces = 6
[samples]
q = 200
validation = 500
[fit]
max_rank = 4
stagnation_tol = 1e-12
max_sweeps = 50
screen_starts = 18
"#;

#[test]
fn fit_writes_model_report_and_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cb.toml", CHECKERBOARD);
    let out = splr(&["fit", "--config", "cb.toml", "--out", "o"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("o/report.csv"));
    assert_eq!(
        header,
        [
            "m",
            "empirical_error",
            "cv_error",
            "validation_error",
            "sparsity",
            "sparsity_1",
            "sparsity_2",
            "selected"
        ]
    );
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let selected: Vec<&Vec<String>> = rows.iter().filter(|r| r[7] == "true").collect();
    assert_eq!(selected.len(), 1);
    assert_eq!(selected[0][0], "2");
    let err: f64 = selected[0][3].parse().unwrap();
    assert!(err <= 1e-8, "validation error {err}");
    assert!(dir.path().join("o/model.json").exists());
    assert!(dir.path().join("o/config.toml").exists());
}

#[test]
fn eval_reproduces_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cb.toml", CHECKERBOARD);
    assert!(
        splr(&["fit", "--config", "cb.toml", "--out", "o"], dir.path())
            .status
            .success()
    );
    let out = splr(
        &[
            "eval",
            "--model",
            "o/model.json",
            "--points",
            "o/fitted.csv",
            "--out",
            "e",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, fitted) = read_csv(&dir.path().join("o/fitted.csv"));
    let (header, evals) = read_csv(&dir.path().join("e/eval.csv"));
    assert_eq!(header, ["x1", "x2", "value"]);
    assert_eq!(fitted.len(), evals.len());
    for (f, e) in fitted.iter().zip(&evals) {
        let a: f64 = f[3].parse().unwrap();
        let b: f64 = e[2].parse().unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn echoed_config_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cb.toml", CHECKERBOARD);
    let a = splr(
        &["fit", "--config", "cb.toml", "--out", "a", "--seed", "5"],
        dir.path(),
    );
    assert!(a.status.success());
    let b = splr(
        &["fit", "--config", "a/config.toml", "--out", "b"],
        dir.path(),
    );
    assert!(b.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a/report.csv")).unwrap(),
        std::fs::read(dir.path().join("b/report.csv")).unwrap()
    );
}

#[test]
fn environment_overrides_seed_and_output() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cb.toml",
        &CHECKERBOARD.replace("max_rank = 4", "max_rank = 1\nselect_rank = false"),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_splr"))
        .args(["fit", "--config", "cb.toml"])
        .current_dir(dir.path())
        .env("SPLR_SEED", "11")
        .env("SPLR_OUT", "envout")
        .output()
        .unwrap();
    assert!(out.status.success());
    let echo = std::fs::read_to_string(dir.path().join("envout/config.toml")).unwrap();
    assert!(echo.contains("seed = 11"));
}

#[test]
fn missing_table_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        r#"
        [function]
        name = "custom"
        table = "missing.csv"
        [basis]
        kind = "legendre"
        degree = 2
        [samples]
        q = 10
        "#,
    );
    let out = splr(&["fit", "--config", "c.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("function.table"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cb.toml",
        &CHECKERBOARD.replace("q = 200", "q = 200\nqq = 1"),
    );
    let out = splr(&["fit", "--config", "cb.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("qq"));
}

#[test]
fn fit_failure_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    // three folds cannot be formed from two samples
    write(
        dir.path(),
        "cb.toml",
        &CHECKERBOARD.replace("q = 200", "q = 2"),
    );
    let out = splr(
        &[
            "fit", "--config", "cb.toml", "--out", "o", "--format", "json",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/report.json")).unwrap())
            .unwrap();
    assert!(report["error"].is_string());
    assert_eq!(report["ranks"].as_array().unwrap().len(), 0);
}

#[test]
fn path_with_one_predictor_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "design.csv", "a,z\n1,1\n2,2.5\n-1,-0.5\n");
    write(
        dir.path(),
        "p.toml",
        r#"
        [function]
        name = "checkerboard"
        [basis]
        kind = "legendre"
        degree = 1
        [samples]
        q = 3
        [path]
        design = "design.csv"
        "#,
    );
    let out = splr(&["path", "--config", "p.toml", "--out", "o"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("o/path.csv"));
    assert_eq!(header, ["step", "lambda", "l1_norm", "active", "loo_error"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][3], "0");
    assert_eq!(rows[1][3], "1");
}

#[test]
fn path_on_orthonormal_design_has_decreasing_lambda() {
    let dir = tempfile::tempdir().unwrap();
    // columns of a scaled Hadamard matrix are orthonormal
    let h = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    let z = [3.0, -1.0, 0.5, 2.0];
    let mut text = String::from("a,b,c,z\n");
    for (row, zi) in h.iter().zip(z) {
        text += &format!("{},{},{},{zi}\n", row[0] / 2.0, row[1] / 2.0, row[2] / 2.0);
    }
    write(dir.path(), "design.csv", &text);
    write(
        dir.path(),
        "p.toml",
        r#"
        [function]
        name = "checkerboard"
        [basis]
        kind = "legendre"
        degree = 1
        [samples]
        q = 4
        [path]
        design = "design.csv"
        "#,
    );
    let out = splr(&["path", "--config", "p.toml", "--out", "o"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, rows) = read_csv(&dir.path().join("o/path.csv"));
    let lambdas: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(lambdas.len(), 4);
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn path_from_benchmark_samples() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cb.toml",
        &format!("{CHECKERBOARD}\n[path]\ndimension = 1\n"),
    );
    let out = splr(
        &[
            "path", "--config", "cb.toml", "--out", "o", "--format", "json",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/path.json")).unwrap())
            .unwrap();
    assert!(doc["steps"].as_array().unwrap().len() >= 2);
    assert!(doc["selected_step"].is_u64());
}

const STUDY: &str = r#"
seed = 0
[function]
name = "friedman"
[basis]
kind = "legendre"
degree = 2
[samples]
c = 1.0
alpha = 2
validation = 300
[fit]
max_rank = 1
als = "ols"
update = "ols"
select_rank = false
[study]
degrees = [2, 3]
repetitions = 3
"#;

#[test]
fn study_writes_three_statistics_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.toml", STUDY);
    let out = splr(
        &["--jobs", "2", "study", "--config", "s.toml", "--out", "o"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("o/study.csv"));
    assert_eq!(header.len(), 11);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[10] == "ok" && r[7] == "3"));
    // Q = 5 (p+1)^2
    assert_eq!(rows[0][4], "45");
    assert_eq!(rows[3][4], "80");
}

#[test]
fn single_cell_study_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "s.toml",
        &STUDY
            .replace("degrees = [2, 3]", "degrees = [2]")
            .replace("repetitions = 3", "repetitions = 1"),
    );
    assert!(
        splr(&["study", "--config", "s.toml", "--out", "o"], dir.path())
            .status
            .success()
    );
    assert!(
        splr(&["fit", "--config", "s.toml", "--out", "f"], dir.path())
            .status
            .success()
    );
    let (_, study) = read_csv(&dir.path().join("o/study.csv"));
    let (_, report) = read_csv(&dir.path().join("f/report.csv"));
    let mean = &study.iter().find(|r| r[8] == "mean").unwrap()[9];
    assert_eq!(mean, &report.last().unwrap()[3]);
}

#[test]
fn empty_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "s.toml",
        &STUDY.replace("degrees = [2, 3]", "degrees = []"),
    );
    let out = splr(&["study", "--config", "s.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty grid"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(splr(&["fit"], dir.path()).status.code(), Some(2));
    assert_eq!(splr(&["bogus"], dir.path()).status.code(), Some(2));
}

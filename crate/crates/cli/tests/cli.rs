use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn crpsbin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crpsbin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn data(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(file)
        .to_string_lossy()
        .into_owned()
}

fn write_csv(dir: &TempDir, name: &str, rows: &[(f64, f64)]) -> PathBuf {
    let path = dir.path().join(name);
    let mut text = String::from("x,y\n");
    for (x, y) in rows {
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a CSV written by the tool, without the `#` config line.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn select_k_on_faithful() {
    let dir = TempDir::new().unwrap();
    let curve = dir.path().join("kcurve.csv");
    let out = crpsbin(&[
        "select-k",
        "--data",
        &data("faithful.csv"),
        "--x",
        "waiting",
        "--y",
        "eruptions",
        "--out",
        s(&curve),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("K* = 2"));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("# crpsbin format_version=1 config="));
    assert_eq!(csv_rows(&curve).len(), 27);
}

#[test]
fn select_k_simulated() {
    let dir = TempDir::new().unwrap();
    let curve = dir.path().join("k.csv");
    let out = crpsbin(&[
        "--seed",
        "7",
        "select-k",
        "--simulate",
        "hetero",
        "--n",
        "1000",
        "--out",
        s(&curve),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let k: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("K* = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((3..=8).contains(&k), "K* = {k}");
}

#[test]
fn missing_file_exits_two() {
    let out = crpsbin(&["select-k", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn fit_constant_responses_costs_nothing() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<(f64, f64)> = (0..12).map(|i| (f64::from(i), 4.5)).collect();
    let input = write_csv(&dir, "flat.csv", &rows);
    let model = dir.path().join("m.json");
    let out = crpsbin(&["fit", "--data", s(&input), "-k", "2", "--out", s(&model)]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("total cost = 0.0"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["format_version"], 1);
    assert_eq!(json["K"], 2);
}

#[test]
fn fit_reports_infeasible_k() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<(f64, f64)> = (0..6).map(|i| (f64::from(i), f64::from(i % 3))).collect();
    let input = write_csv(&dir, "small.csv", &rows);
    let out = crpsbin(&[
        "fit",
        "--data",
        s(&input),
        "-k",
        "4",
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_faithful_auto_k() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    let out = crpsbin(&[
        "fit",
        "--data",
        &data("faithful.csv"),
        "--x",
        "waiting",
        "--y",
        "eruptions",
        "--auto-k",
        "--out",
        s(&model),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let cuts = json["x_boundaries"].as_array().unwrap();
    assert_eq!(cuts.len(), 1);
    assert!((65.0..=70.0).contains(&cuts[0].as_f64().unwrap()));
}

#[test]
fn predict_small_bin_is_whole_line() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(&dir, "tiny.csv", &[(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)]);
    let model = dir.path().join("m.json");
    assert!(
        crpsbin(&["fit", "--data", s(&input), "-k", "1", "--out", s(&model)])
            .status
            .success()
    );

    let sets = dir.path().join("sets.csv");
    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "1",
        "--epsilon",
        "0.2",
        "--out",
        s(&sets),
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&sets);
    assert_eq!(rows[0][2], "true");

    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "1",
        "--epsilon",
        "0.5",
        "--out",
        s(&sets),
    ]);
    assert!(out.status.success());
    assert_eq!(csv_rows(&sets)[0][2], "false");
}

#[test]
fn predict_widths_grow_on_hetero_model() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    let fit = crpsbin(&[
        "fit",
        "--simulate",
        "hetero",
        "--n",
        "1000",
        "-k",
        "5",
        "--out",
        s(&model),
    ]);
    assert!(fit.status.success());
    let sets = dir.path().join("sets.csv");
    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "0.3,1.5,2.7",
        "--y-observed",
        "1,4.5,8",
        "--out",
        s(&sets),
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&sets);
    assert_eq!(rows.len(), 3);
    let widths: Vec<f64> = rows
        .iter()
        .map(|r| {
            assert_eq!(r[2], "false");
            r[4].parse::<f64>().unwrap() - r[3].parse::<f64>().unwrap()
        })
        .collect();
    assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
    for r in &rows {
        let p: f64 = r[5].parse().unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }
}

#[test]
fn predict_knn_splits_a_bimodal_bin() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<(f64, f64)> = (0..50)
        .map(|i| {
            let centre = if i % 2 == 0 { -3.0 } else { 3.0 };
            (f64::from(i), centre + 0.02 * f64::from(i / 2))
        })
        .collect();
    let input = write_csv(&dir, "bimodal.csv", &rows);
    let model = dir.path().join("m.json");
    assert!(
        crpsbin(&["fit", "--data", s(&input), "-k", "1", "--out", s(&model)])
            .status
            .success()
    );

    let sets = dir.path().join("sets.csv");
    let curve = dir.path().join("p.csv");
    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "10",
        "--score",
        "knn",
        "--k",
        "1",
        "--pcurve",
        "10",
        s(&curve),
        "--out",
        s(&sets),
    ]);
    assert!(out.status.success(), "{out:?}");
    let header = std::fs::read_to_string(&sets).unwrap();
    assert!(header.contains("lo_2,hi_2"));
    let row = &csv_rows(&sets)[0];
    let hi_1: f64 = row[4].parse().unwrap();
    let lo_2: f64 = row[5].parse().unwrap();
    assert!(hi_1 < 0.0 && lo_2 > 0.0);
    assert!(std::fs::read_to_string(&curve).unwrap().contains("y,p"));

    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "10",
        "--score",
        "knn",
        "--k",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn predict_rejects_bad_model_version() {
    let dir = TempDir::new().unwrap();
    let input = write_csv(
        &dir,
        "d.csv",
        &[(0.0, 1.0), (1.0, 2.0), (2.0, 4.0), (3.0, 3.0)],
    );
    let model = dir.path().join("m.json");
    assert!(
        crpsbin(&["fit", "--data", s(&input), "-k", "1", "--out", s(&model)])
            .status
            .success()
    );
    let text = std::fs::read_to_string(&model)
        .unwrap()
        .replace("\"format_version\": 1", "\"format_version\": 99")
        .replace("\"format_version\":1", "\"format_version\":99");
    std::fs::write(&model, text).unwrap();
    let out = crpsbin(&["predict", "--model", s(&model), "--x-star", "1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = crpsbin(&[
        "predict",
        "--model",
        s(&model),
        "--x-star",
        "1",
        "--epsilon",
        "1.5",
    ]);
    assert!(!out.status.success());
}

#[test]
fn reproduce_faithful_writes_results() {
    let dir = TempDir::new().unwrap();
    let out = crpsbin(&[
        "reproduce",
        "faithful",
        "-R",
        "4",
        "--data-dir",
        &data(""),
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{out:?}");
    let rows = csv_rows(&dir.path().join("faithful_results.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(
        methods,
        [
            "full_n_insample_eval",
            "n_half",
            "gaussian_split",
            "CQR (cubic)",
            "CQR-QRF"
        ]
    );
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("faithful_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["format_version"], 1);
    assert_eq!(summary["seed"], 20240601);

    let again = TempDir::new().unwrap();
    let args = [
        "reproduce",
        "faithful",
        "-R",
        "4",
        "--data-dir",
        &data(""),
        "--out-dir",
        s(again.path()),
    ];
    assert!(crpsbin(&args).status.success());
    assert_eq!(csv_rows(&again.path().join("faithful_results.csv")), rows);
}

#[test]
fn reproduce_unknown_study_fails() {
    let dir = TempDir::new().unwrap();
    let out = crpsbin(&["reproduce", "nope", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diagnose_constant_data() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<(f64, f64)> = (0..30).map(|i| (f64::from(i), 2.0)).collect();
    let input = write_csv(&dir, "flat.csv", &rows);
    let out = crpsbin(&[
        "diagnose",
        "--data",
        s(&input),
        "--out",
        s(&dir.path().join("d.csv")),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("(exhaustive): 0 of"));
}

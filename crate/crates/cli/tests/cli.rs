use std::path::Path;
use std::process::{Command, Output};

fn expclust(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expclust"))
        .args(args)
        .current_dir(dir)
        .env("EXPCLUST_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = expclust(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = expclust(dir.path(), &["reconstruct", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--rho"));
    assert_eq!(
        expclust(dir.path(), &["reconstruct", "--bogus", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(expclust(dir.path(), &["frobnicate"]).status.code(), Some(2));
    // missing required value
    assert_eq!(
        expclust(dir.path(), &["teacher", "gen", "--din", "2"]).status.code(),
        Some(2)
    );
    // invalid argument caught by the library
    assert_eq!(
        expclust(
            dir.path(),
            &["teacher", "gen", "--din", "0", "--hidden", "2", "--out", "t.json"]
        )
        .status
        .code(),
        Some(2)
    );
    // missing input file
    let io = expclust(dir.path(), &["data", "gen", "--teacher", "nope.json", "--out", "d.bin"]);
    assert_eq!(io.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&io.stderr).contains("nope.json"));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_expclust"))
        .args(["probe", "--help"])
        .env("EXPCLUST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(0), "help wins over the environment");
}

#[test]
fn small_pipeline_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "teacher",
            "gen",
            "--din",
            "2",
            "--hidden",
            "2",
            "--act",
            "tanh",
            "--seed",
            "3",
            "--out",
            "teacher.json",
        ],
    );
    ok(
        d,
        &[
            "data",
            "gen",
            "--teacher",
            "teacher.json",
            "--n",
            "800",
            "--seed",
            "4",
            "--out",
            "data.bin",
        ],
    );
    ok(
        d,
        &[
            "data",
            "gen",
            "--config",
            "data.bin.manifest.json",
            "--out",
            "data.json",
        ],
    );
    let bin = expclust::Dataset::load(d.join("data.bin")).unwrap();
    let txt = expclust::Dataset::load(d.join("data.json")).unwrap();
    assert_eq!(bin.x, txt.x);

    let args = [
        "reconstruct",
        "--data",
        "data.bin",
        "--depth",
        "1",
        "--width",
        "4",
        "--n",
        "3",
        "--gamma",
        "0.6",
        "--steps",
        "40",
        "--finetune-steps",
        "20",
        "--seed",
        "5",
        "--out",
        "a",
    ];
    ok(d, &args);
    for f in [
        "network.json",
        "reports.json",
        "metrics.json",
        "summary.json",
        "manifest.json",
    ] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    ok(d, &["reconstruct", "--config", "a/manifest.json", "--out", "b"]);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/metrics.json"), read("b/metrics.json"));
    assert_eq!(read("a/network.json"), read("b/network.json"));
    let manifest = json(&d.join("a/manifest.json"));
    assert_eq!(manifest["command"], "reconstruct");
    assert_eq!(manifest["seeds"]["master"], 5);
    assert_eq!(manifest["config"]["gamma"], 0.6);

    ok(
        d,
        &[
            "eval",
            "--result",
            "a",
            "--teacher",
            "teacher.json",
            "--data",
            "data.bin",
            "--out",
            "m.json",
        ],
    );
    let m = json(&d.join("m.json"));
    assert_eq!(m["teacher_sizes"], serde_json::json!([2]));
    assert!(m["rmse"].as_f64().unwrap().is_finite());
    assert!(m["layers"][0]["pairs"].is_array());
}

#[test]
fn ensemble_commands_share_the_students_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "teacher", "gen", "--din", "2", "--hidden", "2", "--act", "relu", "--seed", "1", "--out", "t.json",
        ],
    );
    ok(
        d,
        &[
            "data",
            "gen",
            "--teacher",
            "t.json",
            "--n",
            "600",
            "--seed",
            "2",
            "--out",
            "data.bin",
        ],
    );
    std::fs::write(
        d.join("train.json"),
        r#"{"data": "data.bin", "width": [4], "n": 3, "act": "relu", "steps": 20}"#,
    )
    .unwrap();
    ok(
        d,
        &["train", "--config", "train.json", "--seed", "9", "--out", "students"],
    );
    assert!(d.join("students/student_002.json").exists());
    assert_eq!(json(&d.join("students/manifest.json"))["config"]["seed"], 9);

    ok(
        d,
        &[
            "cluster",
            "--students",
            "students",
            "--layer",
            "1",
            "--gamma",
            "0.6",
            "--beta",
            "0.3",
            "--out",
            "report.json",
        ],
    );
    let report = json(&d.join("report.json"));
    assert!(report["dendrogram"].is_object());
    assert_eq!(report["n_students"], 3);
    assert_eq!(
        expclust(
            d,
            &["cluster", "--students", "students", "--layer", "0", "--out", "r.json"]
        )
        .status
        .code(),
        Some(2)
    );

    ok(
        d,
        &[
            "classify",
            "--student",
            "students/student_000.json",
            "--data",
            "data.bin",
            "--out",
            "labels.json",
        ],
    );
    let labels = json(&d.join("labels.json"));
    assert_eq!(labels[0]["neurons"].as_array().unwrap().len(), 4);

    ok(
        d,
        &[
            "experiment",
            "sweep",
            "--ensemble",
            "students",
            "--gammas",
            "0.6,1",
            "--betas",
            "0.3",
            "--finetune-steps",
            "5",
            "--out",
            "sweep.csv",
        ],
    );
    let csv = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), expclust::experiments::SWEEP_HEADER);
    assert_eq!(csv.lines().count(), 3);

    ok(
        d,
        &[
            "probe",
            "--data",
            "data.bin",
            "--widths",
            "1,2",
            "--steps",
            "10",
            "--act",
            "relu",
            "--out",
            "probe.json",
        ],
    );
    assert_eq!(json(&d.join("probe.json"))["widths"], serde_json::json!([1, 2]));

    std::fs::write(d.join("grid.json"), r#"{"d_in": [2], "r": [1], "teachers_per_cell": 1, "seeds_per_teacher": 2, "rho": [1, 2], "samples": 200, "steps": 5}"#).unwrap();
    ok(d, &["experiment", "grid", "--config", "grid.json", "--out", "grid.csv"]);
    let csv = std::fs::read_to_string(d.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), expclust::experiments::GRID_HEADER);
    assert_eq!(csv.lines().count(), 5);
    assert!(d.join("grid.csv.summary.json").exists());
    assert!(d.join("grid.csv.manifest.json").exists());
}

#[test]
fn readme_worked_example_recovers_the_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "teacher",
            "gen",
            "--din",
            "4",
            "--hidden",
            "4",
            "--act",
            "g",
            "--seed",
            "1",
            "--out",
            "teacher.json",
        ],
    );
    ok(
        d,
        &[
            "data",
            "gen",
            "--teacher",
            "teacher.json",
            "--n",
            "30000",
            "--seed",
            "1",
            "--out",
            "data.bin",
        ],
    );
    ok(
        d,
        &[
            "reconstruct",
            "--data",
            "data.bin",
            "--depth",
            "1",
            "--rho",
            "4",
            "--base",
            "4",
            "--n",
            "10",
            "--gamma",
            "0.5",
            "--steps",
            "300",
            "--seed",
            "1",
            "--out",
            "result",
        ],
    );
    ok(
        d,
        &[
            "eval",
            "--result",
            "result",
            "--teacher",
            "teacher.json",
            "--data",
            "data.bin",
            "--out",
            "metrics.json",
        ],
    );
    let m = json(&d.join("metrics.json"));
    assert_eq!(m["recovered_sizes"], serde_json::json!([4]));
    assert!(m["rmse"].as_f64().unwrap() <= 1e-10, "{m}");
    let layer = &m["layers"][0];
    assert_eq!(layer["pairs"].as_array().unwrap().len(), 4);
    assert!(layer["max_input_distance"].as_f64().unwrap() <= 1e-8, "{layer}");
}

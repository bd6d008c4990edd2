use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn icessm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icessm"))
        .args(args)
        .current_dir(dir)
        .env("ICESSM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = icessm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    icessm(dir, args).status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn raster_scan_golden_file() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["scan", "--kind", "raster", "--dims", "1,2,2", "--out", "s"],
    );
    let text = fs::read_to_string(tmp.path().join("s/order.txt")).unwrap();
    assert_eq!(text, "raster 1 2 2 forward\n0 1 2 3\n");
    assert_eq!(manifest(&tmp.path().join("s"))["command"], "scan");
}

#[test]
fn scan_with_routes_writes_every_route() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["scan", "--dims", "2,4,4", "--routes", "4", "--out", "s"],
    );
    let text = fs::read_to_string(tmp.path().join("s/order.txt")).unwrap();
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn locality_bench_is_one_row_per_kind_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["bench-locality", "--dims", "8,8,8", "--out", "a"],
    );
    ok(
        tmp.path(),
        &["bench-locality", "--dims", "8,8,8", "--out", "b"],
    );
    let a = fs::read(tmp.path().join("a/locality.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/locality.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 6);
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &["synth", "--dims", "30,12,12", "--seed", "7", "--out", out],
        );
    }
    let a = fs::read(tmp.path().join("a/grid.sicg")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/grid.sicg")).unwrap());
    assert_eq!(manifest(&tmp.path().join("a"))["seed"], 7);
}

#[test]
fn preprocess_keeps_a_gapless_grid() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["synth", "--dims", "30,12,12", "--seed", "1", "--out", "s"],
    );
    ok(
        tmp.path(),
        &["preprocess", "--input", "s/grid.sicg", "--out", "p"],
    );
    let a = icessm::data::read_grid(tmp.path().join("s/grid.sicg")).unwrap();
    let b = icessm::data::read_grid(tmp.path().join("p/grid.sicg")).unwrap();
    assert_eq!(a.frames(), b.frames());
}

#[test]
fn raw_series_must_be_preprocessed_before_training() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &[
            "synth",
            "--dims",
            "40,12,12",
            "--raw",
            "--gap-days",
            "2",
            "--out",
            "raw",
        ],
    );
    assert_eq!(
        code(
            tmp.path(),
            &["train", "--data", "raw/grid.sicg", "--out", "m"]
        ),
        3
    );
    ok(
        tmp.path(),
        &["preprocess", "--input", "raw/grid.sicg", "--out", "p"],
    );
    let g = icessm::data::read_grid(tmp.path().join("p/grid.sicg")).unwrap();
    assert_eq!(g.dims().0, 40);
    assert_eq!(g.count_missing(), 0);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(tmp.path(), &["scan", "--dims", "0,1,1", "--out", "x"]),
        2
    );
    assert_eq!(
        code(
            tmp.path(),
            &["scan", "--kind", "spiral", "--dims", "1,1,1", "--out", "x"]
        ),
        2
    );
    assert_eq!(code(tmp.path(), &["frobnicate"]), 2);
    assert_eq!(
        code(
            tmp.path(),
            &["preprocess", "--input", "missing.sicg", "--out", "x"]
        ),
        3
    );
    assert_eq!(
        code(
            tmp.path(),
            &["predict", "--model", "nowhere", "--data", "x", "--out", "x"]
        ),
        3
    );
    fs::write(tmp.path().join("junk.sicg"), b"not a grid").unwrap();
    assert_eq!(
        code(
            tmp.path(),
            &["preprocess", "--input", "junk.sicg", "--out", "x"]
        ),
        3
    );
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_icessm"))
        .args(["bench-locality", "--out", "x"])
        .current_dir(tmp.path())
        .env("ICESSM_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn train_predict_recurse_eval_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["synth", "--dims", "48,16,16", "--seed", "3", "--out", "s"],
    );
    let train = [
        "train",
        "--data",
        "s/grid.sicg",
        "--hidden",
        "8",
        "--fssm",
        "1",
        "--state-size",
        "2",
        "--epochs",
        "2",
        "--patience",
        "1",
        "--head",
        "gaussian",
        "--seed",
        "5",
    ];
    ok(d, &[&train[..], &["--out", "m"]].concat());
    ok(d, &[&train[..], &["--out", "m2"]].concat());
    for f in ["model.ckpt", "model.json", "history.csv", "manifest.json"] {
        assert!(d.join("m").join(f).exists(), "{f} missing");
    }
    assert_eq!(
        fs::read(d.join("m/model.ckpt")).unwrap(),
        fs::read(d.join("m2/model.ckpt")).unwrap()
    );

    ok(
        d,
        &[
            "predict",
            "--model",
            "m",
            "--data",
            "s/grid.sicg",
            "--at",
            "10",
            "--out",
            "p",
        ],
    );
    let f = icessm::data::read_grid(d.join("p/forecast.sicg")).unwrap();
    assert_eq!(f.dims(), (14, 16, 16));
    assert_eq!(f.dates()[0], 24);
    assert!(d.join("p/sigma.sicg").exists());

    ok(
        d,
        &[
            "recurse",
            "--model",
            "m",
            "--data",
            "s/grid.sicg",
            "--at",
            "0",
            "--steps",
            "2",
            "--out",
            "r",
        ],
    );
    let r = icessm::data::read_grid(d.join("r/forecast.sicg")).unwrap();
    assert_eq!(r.dims(), (28, 16, 16));

    ok(
        d,
        &[
            "eval",
            "--forecast",
            "p/forecast.sicg",
            "--truth",
            "p/forecast.sicg",
            "--out",
            "self",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("self/report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["rmse"], 0.0);
    assert_eq!(report["overall"]["iou"], 1.0);

    ok(
        d,
        &[
            "eval",
            "--model",
            "m",
            "--data",
            "s/grid.sicg",
            "--out",
            "e",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["per_lead_day"].as_array().unwrap().len(), 14);
    let ppm = fs::read(d.join("e/bias.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(ppm.len(), b"P6\n16 16\n255\n".len() + 3 * 256);
    assert_eq!(manifest(&d.join("e"))["command"], "eval");

    assert_eq!(
        code(
            d,
            &[
                "predict",
                "--model",
                "m",
                "--data",
                "s/grid.sicg",
                "--at",
                "40",
                "--out",
                "x"
            ]
        ),
        2
    );
}

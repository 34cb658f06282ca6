//! Runs the `hyperseg` binary through synth → train → eval → matrix and
//! the calibrate/inflate utilities.

use std::fs;
use std::path::Path;
use std::process::Command;

use hyperseg::calibration::CalibrationReport;
use hyperseg::hypercube::{load_cube, load_mask, save_cube, DatasetManifest, HyperCube, WavelengthGrid};
use hyperseg::metrics::METRICS_CSV_HEADER;
use hyperseg::models::{Checkpoint, PatchEmbedWeights};
use hyperseg::numcore::Tensor;

fn hyperseg(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_hyperseg")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "hyperseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn hyperseg_fails(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_hyperseg")).args(args).output().unwrap();
    assert!(!out.status.success(), "hyperseg {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("scene.toml");
    fs::write(
        &config,
        r#"
        height = 16
        width = 16
        bands = 8
        start_nm = 400.0
        end_nm = 1000.0
        noise_sigma = 0.01
        sites = 5
        seed = 0

        [[classes]]
        name = "background"
        baseline = 0.1
        bumps = []
        texture_amplitude = 0.0
        [classes.texture]
        kind = "flat"

        [[classes]]
        name = "metal"
        baseline = 0.6
        bumps = [{ center_nm = 700.0, width_nm = 80.0, amplitude = 0.2 }]
        texture_amplitude = 0.0
        [classes.texture]
        kind = "flat"
        "#,
    )
    .unwrap();
    let data = root.join("data");
    hyperseg(&["synth", "--config", s(&config), "--train", "2", "--test", "1", "--seed", "3", "--out", s(&data)]);
    let manifest_path = data.join("manifest.toml");
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    assert_eq!(manifest.entries.len(), 3);
    assert_eq!(manifest.class_names, ["background", "metal"]);

    let runs = root.join("runs");
    hyperseg(&[
        "train", "--manifest", s(&manifest_path), "--out", s(&runs), "--id", "u4", "--arch", "unet",
        "--bands", "uniform:4", "--widths", "4,8", "--epochs", "3", "--lr", "0.01", "--seed", "1",
        "--freeze-epochs", "1",
    ]);
    let ckpt = Checkpoint::load(&runs.join("u4.ckpt")).unwrap();
    assert_eq!(ckpt.bands, "uniform:4");
    assert_eq!(ckpt.epoch, 3);
    let loss = fs::read_to_string(runs.join("u4_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 5);
    assert_eq!(loss.lines().next(), Some("epoch,loss"));

    let eval = root.join("eval");
    let stdout = hyperseg(&[
        "eval", "--checkpoint", s(&runs.join("u4.ckpt")), "--manifest", s(&manifest_path), "--out", s(&eval),
        "--include-background",
    ]);
    assert!(stdout.starts_with(METRICS_CSV_HEADER));
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["u4", "4", "VGG-style", "U-Net"]);
    assert!(fs::read_to_string(eval.join("confusion.csv")).unwrap().starts_with("truth\\pred,background,metal"));
    let pred = load_mask(&eval.join("pred/scene002.png"), manifest.class_names.clone()).unwrap();
    assert_eq!((pred.height(), pred.width()), (16, 16));

    let err = hyperseg_fails(&[
        "eval", "--checkpoint", s(&runs.join("u4.ckpt")), "--manifest", s(&manifest_path), "--out", s(&eval),
        "--bands", "all",
    ]);
    assert!(err.contains("configuration error"), "{err}");

    let spec = root.join("matrix.toml");
    fs::write(
        &spec,
        r#"
        [[experiments]]
        id = "b"
        arch = "spectral1d"
        bands = "rgb:465,550,630"
        manifest = "data/manifest.toml"
        output = "m/b"
        [experiments.train]
        epochs = 2
        lr = 0.01

        [[experiments]]
        id = "a"
        arch = "encdec2d"
        bands = "all"
        manifest = "data/manifest.toml"
        output = "m/a"
        widths = [4]
        [experiments.train]
        epochs = 2
        lr = 0.01
        "#,
    )
    .unwrap();
    let results = root.join("results.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_hyperseg"))
        .args(["matrix", "--spec", s(&spec), "--out", s(&results), "--epochs", "1"])
        .env("HYPERSEG_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_CSV_HEADER);
    assert!(lines[1].starts_with("a,8,VGG-style,Encoder-decoder,"));
    assert!(lines[2].starts_with("b,3,VGG-style,spectral only,"));
    assert_eq!(Checkpoint::load(&root.join("m/a/a.ckpt")).unwrap().epoch, 1);

    let bad = Command::new(env!("CARGO_BIN_EXE_hyperseg"))
        .args(["matrix", "--spec", s(&spec), "--out", s(&results)])
        .env("HYPERSEG_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn calibrate_and_inflate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let grid = || WavelengthGrid::uniform(400.0, 700.0, 2).unwrap();
    let raw = HyperCube::new(1, 2, vec![100.0, 900.0, 50.0, 300.0], grid(), false).unwrap();
    let white = HyperCube::new(1, 1, vec![500.0, 500.0], grid(), false).unwrap();
    let dark = HyperCube::new(1, 1, vec![100.0, 100.0], grid(), false).unwrap();
    for (cube, name) in [(&raw, "raw.hdr"), (&white, "white.hdr"), (&dark, "dark.hdr")] {
        save_cube(cube, &root.join(name)).unwrap();
    }
    let out = root.join("refl.hdr");
    hyperseg(&[
        "calibrate", "--raw", s(&root.join("raw.hdr")), "--white", s(&root.join("white.hdr")),
        "--dark", s(&root.join("dark.hdr")), "--out", s(&out),
    ]);
    let refl = load_cube(&out).unwrap();
    assert!(refl.is_calibrated());
    assert_eq!(refl.values(), [0.0, 1.0, 0.0, 0.5]);
    let report: CalibrationReport = toml::from_str(&fs::read_to_string(root.join("refl.report.toml")).unwrap()).unwrap();
    assert_eq!((report.clipped_low, report.clipped_high, report.invalid_pixel_count), (1, 1, 0));

    let err = hyperseg_fails(&["calibrate", "--raw", s(&out), "--white", s(&root.join("white.hdr")),
        "--dark", s(&root.join("dark.hdr")), "--out", s(&root.join("again.hdr"))]);
    assert!(err.contains("already calibrated"), "{err}");

    let w = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.125);
    let rgb = PatchEmbedWeights::new(w, Tensor::from_fn(&[2], |i| i as f64)).unwrap();
    rgb.save(&root.join("rgb.pe")).unwrap();
    hyperseg(&["inflate", "--input", s(&root.join("rgb.pe")), "--channels", "7", "--output", s(&root.join("seven.pe"))]);
    let seven = PatchEmbedWeights::load(&root.join("seven.pe")).unwrap();
    assert_eq!(seven.channels(), 7);
    assert_eq!(seven.bias(), rgb.bias());
}

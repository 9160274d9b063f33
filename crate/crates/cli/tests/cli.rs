use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dropnoise_core::io::{decode_png, load_checkpoint, read_csv_table};
use dropnoise_core::training::TrainLog;
use dropnoise_core::variety::{TABLE_FILE, P_GRID};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dropnoise")).args(args).output().unwrap()
}

fn train(p: f64, out: &Path) -> Output {
    let (p, out, data) = (p.to_string(), out.display().to_string(), data().display().to_string());
    run(&["train", "--p-train", &p, "--epochs", "1", "--images", "128", "--seed", "4", "--data", &data, "--out", &out])
}

#[test]
fn train_writes_checkpoint_and_log_with_line_progress() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ptrain-0.4.ckpt");
    let out = train(0.4, &ckpt);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with("epoch 1/1 step 2 "), "{text}");

    let c = load_checkpoint(&ckpt).unwrap();
    assert_eq!(c.p_train(), Some(0.4));
    assert_eq!(c.train_config.as_ref().unwrap().dataset_size, Some(128));
    let log: TrainLog = serde_json::from_slice(&std::fs::read(dir.path().join("ptrain-0.4.log.json")).unwrap()).unwrap();
    assert_eq!(log.steps.len(), 2);
    assert_eq!(c.log_digest, Some(log.digest()));
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(1.0, &dir.path().join("x.ckpt"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p-train"));

    let missing = dir.path().join("nope").display().to_string();
    let out = run(&["train", "--p-train", "0.2", "--data", &missing, "--out", "x.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn matrix_grid_and_compare_from_trained_models() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    let m = models.display().to_string();

    let out = train(0.0, &models.join("ptrain-0.ckpt"));
    assert!(out.status.success());
    let report = dir.path().join("all").display().to_string();
    let out = run(&["matrix", "--models", &m, "--n", "3", "--r", "2", "--out", &report]);
    assert!(!out.status.success(), "one model cannot fill the grid");
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.2"));

    for p in &P_GRID[1..] {
        assert!(train(*p, &models.join(format!("ptrain-{p}.ckpt"))).status.success());
    }
    let out = run(&["matrix", "--models", &m, "--n", "3", "--r", "2", "--seed", "9", "--out", &report]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_csv_table(&Path::new(&report).join(TABLE_FILE)).unwrap();
    assert_eq!(table.columns, P_GRID);
    assert_eq!(table.row_labels, P_GRID);
    assert!(table.cells[0].iter().all(|&v| v == 0.0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().as_bytes(), std::fs::read(Path::new(&report).join(TABLE_FILE)).unwrap());
    assert!(Path::new(&report).join("distortion.json").exists());

    let first = dir.path().join("first").display().to_string();
    let out = run(&["matrix", "--models", &m, "--n", "3", "--r", "2", "--seed", "9", "--placement", "first", "--out", &first]);
    assert!(out.status.success());
    let out = run(&["compare", "--all", &report, "--first", &first]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["cells"].as_array().unwrap().len(), 25);

    let png = dir.path().join("grid.png");
    let out = run(&["grid", "--model", &models.join("ptrain-0.4.ckpt").display().to_string(), "--out", &png.display().to_string()]);
    assert!(out.status.success());
    let img = decode_png(&std::fs::read(&png).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (5 * 28, 3 * 28));

    let pgm = dir.path().join("grid.pgm");
    let out = run(&["grid", "--model", &models.join("ptrain-0.4.ckpt").display().to_string(), "--pgm", "--out", &pgm.display().to_string()]);
    assert!(out.status.success());
    let bytes = std::fs::read(&pgm).unwrap();
    let header = b"P5\n140 84\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], img.pixels.as_slice());
}

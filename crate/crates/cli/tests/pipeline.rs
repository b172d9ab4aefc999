use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ellip_core::datagen::read_dataset;
use ellip_core::evalsuite::evaluate_network;
use ellip_core::ivnet::load_model;

fn ellip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ellip")).args(args).output().expect("spawn ellip")
}

fn ok(args: &[&str]) {
    let out = ellip(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, s: usize, offset: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--m", "17", "--s", &s.to_string(), "--seed", "5", "--index-offset", &offset.to_string(), "--out", p(&out)]);
    out
}

fn tiny_train(data: &Path, out: &Path, epochs: usize) {
    ok(&[
        "train",
        "--data",
        p(data),
        "--set",
        "blocks=2",
        "--set",
        "base_channels=4",
        "--epochs",
        &epochs.to_string(),
        "--seed",
        "9",
        "--out",
        p(out),
    ]);
}

fn mean_u_error(csv: &Path) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    let vals: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn eval_csv_matches_in_process_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 10, 0);
    let test = gen(dir.path(), "test.epd", 4, 1000);
    let run = dir.path().join("run");
    tiny_train(&train, &run, 3);
    let ev = dir.path().join("ev");
    ok(&["eval", "--ckpt", p(&run.join("best.ivn")), "--data", p(&test), "--out", p(&ev)]);

    let model = load_model(&run.join("best.ivn")).unwrap();
    let report = evaluate_network(&model, &read_dataset(&test).unwrap(), 8).unwrap();
    let text = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let from_cli: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(from_cli.len(), report.u_errors.len());
    for (a, b) in from_cli.iter().zip(&report.u_errors) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(mean_u_error(&ev.join("metrics.csv")).to_bits(), (report.u_errors.iter().sum::<f64>() / 4.0).to_bits());
    assert!(ev.join("manifest.txt").exists());
    assert!(run.join("manifest.txt").exists() && run.join("log.csv").exists() && run.join("config.cfg").exists());
}

#[test]
fn pod_curve_is_non_increasing_on_training_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 20, 0);
    let test = gen(dir.path(), "test.epd", 5, 1000);
    let out = dir.path().join("pod");
    ok(&["pod", "--data", p(&train), "--test", p(&test), "--r", "16", "--out", p(&out)]);
    let text = fs::read_to_string(out.join("curve_train.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.last().unwrap()[0], 16.0);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1], "galerkin error rose: {w:?}");
        assert!(w[1][2] <= w[0][2], "projection error rose: {w:?}");
    }
    assert!(out.join("curve_test.csv").exists());
    let ev = dir.path().join("ev");
    ok(&["eval", "--pod", p(&out.join("basis.epb")), "--data", p(&test), "--out", p(&ev)]);
    assert!(mean_u_error(&ev.join("metrics.csv")).is_finite());
}

#[test]
fn truncated_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 4, 0);
    let run = dir.path().join("run");
    tiny_train(&train, &run, 1);
    let pod = dir.path().join("pod");
    ok(&["pod", "--data", p(&train), "--r", "2", "--out", p(&pod)]);

    let cases: Vec<(PathBuf, Vec<&str>)> = vec![
        (train.clone(), vec!["invert", "--data"]),
        (run.join("best.ivn"), vec!["eval", "--data", p(&train), "--ckpt"]),
        (pod.join("basis.epb"), vec!["eval", "--data", p(&train), "--pod"]),
    ];
    for (file, prefix) in cases {
        let bytes = fs::read(&file).unwrap();
        let copy = dir.path().join(format!("cut_{}", file.file_name().unwrap().to_str().unwrap()));
        let meta = ellip_core::datagen::sidecar_path(&file);
        if meta.exists() {
            fs::copy(&meta, ellip_core::datagen::sidecar_path(&copy)).unwrap();
        }
        let n = bytes.len();
        for cut in [0, 3, 4, 11, 12, 40, n / 3, n / 2, n - 9, n - 1] {
            fs::write(&copy, &bytes[..cut]).unwrap();
            let mut args = prefix.clone();
            args.push(p(&copy));
            let out_dir = dir.path().join("o");
            args.extend(["--out", p(&out_dir)]);
            let out = ellip(&args);
            assert_eq!(code(&out), 3, "{file:?} cut at {cut}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
}

#[test]
fn manifest_hash_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 3, 0);
    let mut bytes = fs::read(&train).unwrap();
    let k = bytes.len() - 5;
    bytes[k] ^= 0x40;
    fs::write(&train, bytes).unwrap();
    let out = ellip(&["invert", "--data", p(&train), "--out", p(&dir.path().join("inv.epd"))]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[data]:") && err.trim_end().lines().count() == 1, "{err}");
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 6, 0);
    let out_dir = dir.path().join("x");

    let out = ellip(&["gen-data", "--bogus-flag"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]:"));

    let out = ellip(&["train", "--data", p(&train), "--set", "no_such_key=1", "--out", p(&out_dir)]);
    assert_eq!(code(&out), 2);

    let out = ellip(&["train", "--data", p(&train), "--set", "blocks=zero", "--out", p(&out_dir)]);
    assert_eq!(code(&out), 2);

    let out = ellip(&["eval", "--data", p(&train), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 2);

    let out = ellip(&["eval", "--data", p(&dir.path().join("missing.epd")), "--pod", "b.epb", "--out", p(&out_dir)]);
    assert_eq!(code(&out), 3);

    let out = ellip(&[
        "train",
        "--data",
        p(&train),
        "--set",
        "blocks=1",
        "--set",
        "base_channels=4",
        "--set",
        "divergence_factor=0.5",
        "--epochs",
        "2",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[numerical]:"));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 10, 0);
    let straight = dir.path().join("a");
    tiny_train(&train, &straight, 4);
    let resumed = dir.path().join("b");
    tiny_train(&train, &resumed, 2);
    ok(&[
        "train",
        "--data",
        p(&train),
        "--set",
        "blocks=2",
        "--set",
        "base_channels=4",
        "--epochs",
        "4",
        "--seed",
        "9",
        "--resume",
        "--out",
        p(&resumed),
    ]);
    // state.ets also stores wall-clock times, so only the weights are compared.
    for name in ["last.ivn", "best.ivn"] {
        assert_eq!(fs::read(straight.join(name)).unwrap(), fs::read(resumed.join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read_to_string(resumed.join("log.csv")).unwrap().lines().count(), 5);
}

#[test]
fn invert_twice_restores_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.epd", 3, 0);
    let once = dir.path().join("inv.epd");
    let twice = dir.path().join("back.epd");
    ok(&["invert", "--data", p(&train), "--out", p(&once)]);
    ok(&["invert", "--data", p(&once), "--out", p(&twice)]);
    assert_eq!(read_dataset(&train).unwrap(), read_dataset(&twice).unwrap());
    assert_eq!(fs::read(&train).unwrap(), fs::read(&twice).unwrap());
}

#[test]
fn solve_and_uq_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("sol");
    ok(&["solve", "--family", "helmholtz", "--m", "17", "--seed", "2", "--index", "3", "--pgm", "--out", p(&sol)]);
    let report = fs::read_to_string(sol.join("report.txt")).unwrap();
    assert!(report.contains("relative_residual"));
    assert!(sol.join("u.pgm").exists() && sol.join("manifest.txt").exists());

    let data = gen(dir.path(), "d.epd", 6, 0);
    let uq = dir.path().join("uq");
    ok(&["uq", "--data", p(&data), "--seed", "4", "--out", p(&uq)]);
    let table = fs::read_to_string(uq.join("qoi.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "source,qoi,component,mean,std,p_ext");
    assert_eq!(table.lines().count(), 1 + 3 + 4);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchsvd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_pgm(path: &Path, rows: usize, cols: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for i in 0..rows {
        for j in 0..cols {
            bytes.push(f(i, j));
        }
    }
    fs::write(path, bytes).unwrap();
}

fn pixels(path: &Path) -> Vec<f64> {
    patchsvd::imageio::read_grayscale(path).unwrap().into_iter().collect()
}

fn texture(i: usize, j: usize) -> u8 {
    ((i * 7 + j * 13) % 64 * 3 + if (i / 8 + j / 8).is_multiple_of(2) { 40 } else { 0 }) as u8
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn constant_image_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (input, archive, output) = (
        dir.path().join("c.pgm"),
        dir.path().join("c.clra"),
        dir.path().join("c.png"),
    );
    write_pgm(&input, 64, 64, |_, _| 100);
    ok(&[
        "compress",
        p(&input),
        "--out",
        p(&archive),
        "--patch-size",
        "8",
        "--clusters",
        "4",
    ]);
    ok(&["decompress", p(&archive), "--out", p(&output)]);
    assert!(pixels(&output).iter().all(|&v| v == 100.0));
}

#[test]
fn full_energy_is_lossless_after_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let (input, archive, output) = (
        dir.path().join("t.pgm"),
        dir.path().join("t.clra"),
        dir.path().join("t.png"),
    );
    write_pgm(&input, 40, 48, texture);
    ok(&[
        "compress",
        p(&input),
        "--out",
        p(&archive),
        "--alpha",
        "1.0",
        "--patch-size",
        "4",
        "--clusters",
        "5",
    ]);
    ok(&["decompress", p(&archive), "--out", p(&output)]);
    assert_eq!(pixels(&output), pixels(&input));

    let global = dir.path().join("g.clra");
    ok(&[
        "compress",
        p(&input),
        "--out",
        p(&global),
        "--method",
        "global",
        "--rank",
        "40",
    ]);
    ok(&["decompress", p(&global), "--out", p(&output)]);
    assert_eq!(pixels(&output), pixels(&input));
}

#[test]
fn archives_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.pgm");
    write_pgm(&input, 64, 64, texture);
    let mut archives = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("a{i}.clra"));
        ok(&[
            "compress",
            p(&input),
            "--out",
            p(&out),
            "--cf",
            "5",
            "--seed",
            "3",
            "--threads",
            threads,
        ]);
        archives.push(fs::read(out).unwrap());
    }
    assert!(archives.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn truncated_archive_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let (input, archive, output) = (
        dir.path().join("t.pgm"),
        dir.path().join("t.clra"),
        dir.path().join("t.png"),
    );
    write_pgm(&input, 32, 32, texture);
    ok(&["compress", p(&input), "--out", p(&archive)]);
    let bytes = fs::read(&archive).unwrap();
    fs::write(&archive, &bytes[..bytes.len() - 5]).unwrap();
    let out = run(&["decompress", p(&archive), "--out", p(&output)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("archive format error"));
    assert!(!output.exists());
}

#[test]
fn compare_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (input, mask) = (dir.path().join("t.pgm"), dir.path().join("m.pgm"));
    let (csv, json) = (dir.path().join("cmp.csv"), dir.path().join("cmp.json"));
    write_pgm(&input, 64, 64, texture);
    write_pgm(&mask, 64, 64, |i, j| {
        if (16..48).contains(&i) && (16..48).contains(&j) {
            255
        } else {
            0
        }
    });
    ok(&[
        "compare",
        p(&input),
        "--mask",
        p(&mask),
        "--cf-targets",
        "3,10",
        "--cf-threshold",
        "0.15",
        "--iou-threshold",
        "100",
        "--out",
        p(&csv),
        "--report",
        p(&json),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,cf_target,cf_achieved,matched,region,mse,psnr,ssim,iou,rel_err,epi"
    );
    assert_eq!(lines.count(), 2 * 2 * 3);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 2);
    assert_eq!(report["iou_threshold"], 100.0);
}

#[test]
fn evaluate_reports_identical_images_as_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.pgm");
    write_pgm(&input, 16, 16, texture);
    let stdout = ok(&["evaluate", p(&input), p(&input)]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let full = &report["metrics"][0];
    assert_eq!(full["mse"], 0.0);
    assert_eq!(full["ssim"], 1.0);
    assert_eq!(full["epi"], 1.0);
}

#[test]
fn invalid_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.pgm");
    write_pgm(&input, 16, 16, texture);
    let archive = dir.path().join("x.clra");
    assert!(!run(&["compress", p(&input), "--out", p(&archive), "--alpha", "0"])
        .status
        .success());
    assert!(!run(&["compress", p(&input), "--out", p(&archive), "--stride", "9"])
        .status
        .success());
    assert!(
        !run(&["compress", p(&input), "--out", p(&archive), "--method", "global"])
            .status
            .success()
    );
    assert!(!archive.exists());
}

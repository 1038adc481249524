use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use certpose_core::io::{ResultDocument, AB_COLUMNS, BENCHMARK_COLUMNS};

fn certpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_certpose"))
        .args(args)
        .env_remove("CERTPOSE_SEED")
        .output()
        .expect("spawn certpose")
}

fn generate(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut full = vec!["generate", "-o", path.to_str().unwrap()];
    full.extend_from_slice(args);
    let out = certpose(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn outlier_mask(path: &Path) -> Vec<bool> {
    let text = std::fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with("# outlier_mask")).unwrap();
    line.split_whitespace().nth(2).unwrap_or("").chars().map(|c| c == '1').collect()
}

fn document(out: &Output) -> ResultDocument {
    ResultDocument::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

#[test]
fn noiseless_fixture_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(dir.path(), "clean.txt", &["--n", "50", "--noise", "0", "--seed", "3"]);
    let out = certpose(&["estimate", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc = document(&out);
    assert_eq!(doc.certificate.as_ref().unwrap().status, "optimal");
    doc.pose().unwrap();
}

#[test]
fn csv_output_has_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(dir.path(), "clean.txt", &["--n", "30", "--noise", "0", "--seed", "4"]);
    let out = certpose(&["estimate", "--csv", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("status,cost"));
    assert!(lines[1].starts_with("optimal,"));
}

#[test]
fn too_few_lines_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(dir.path(), "seven.txt", &["--n", "7", "--noise", "0"]);
    let out = certpose(&["estimate", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.txt");
    std::fs::write(&f, "# header\n0 0 1 0 0 1\n0 0 1 zero 0 1\n").unwrap();
    let out = certpose(&["estimate", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('3'));
}

#[test]
fn missing_file_and_bad_flags_exit_one() {
    assert_eq!(certpose(&["estimate", "/nonexistent/file.txt"]).status.code(), Some(1));
    assert_eq!(certpose(&["estimate"]).status.code(), Some(1));
    assert_eq!(certpose(&["benchmark", "--grid", "depth=3"]).status.code(), Some(1));
}

#[test]
fn robust_clean_fixture_keeps_every_weight() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(dir.path(), "clean.txt", &["--n", "60", "--noise", "0", "--seed", "5"]);
    let out = certpose(&["robust", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let robust = document(&out).robust.unwrap();
    assert!(robust.is_valid);
    assert_eq!(robust.weights.len(), 60);
    assert!(robust.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
}

#[test]
fn robust_finds_inliers_at_half_outliers() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(
        dir.path(),
        "half.txt",
        &["--n", "200", "--fov", "150", "--outliers", "0.5", "--seed", "5"],
    );
    let mask = outlier_mask(&f);
    assert_eq!(mask.iter().filter(|&&o| o).count(), 100);
    let out = certpose(&["robust", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let robust = document(&out).robust.unwrap();
    let truth: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let found = truth.iter().filter(|i| robust.inlier_indices.contains(i)).count();
    assert!(found as f64 >= 0.9 * truth.len() as f64, "recall {found}/{}", truth.len());
}

#[test]
fn unreachable_inlier_count_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate(dir.path(), "n200.txt", &["--n", "200", "--seed", "6"]);
    let out = certpose(&["robust", "--min-inliers", "1000", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!document(&out).robust.unwrap().is_valid);
}

fn benchmark(extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["benchmark", "--grid", "n=8..40:8", "noise=0.5", "--trials", "3", "--seed", "1"];
    args.extend_from_slice(extra);
    let out = certpose(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn benchmark_is_deterministic_across_runs_and_threads() {
    let a = benchmark(&["--threads", "1"]);
    assert_eq!(a, benchmark(&["--threads", "1"]));
    assert_eq!(a, benchmark(&["--threads", "4"]));
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), BENCHMARK_COLUMNS.join(","));
    assert_eq!(lines.count(), 5 * 3);
}

#[test]
fn environment_seed_overrides_flag() {
    let run = |env: Option<&str>, seed: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_certpose"));
        cmd.args(["benchmark", "--grid", "n=12", "--trials", "2", "--seed", seed]);
        match env {
            Some(v) => cmd.env("CERTPOSE_SEED", v),
            None => cmd.env_remove("CERTPOSE_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_eq!(run(Some("9"), "1"), run(None, "9"));
    assert_ne!(run(None, "1"), run(None, "9"));
}

#[test]
fn ab_columns_present_on_request() {
    let text = String::from_utf8(benchmark(&["--ab-precondition"])).unwrap();
    let header = text.lines().next().unwrap();
    for col in BENCHMARK_COLUMNS.iter().chain(AB_COLUMNS.iter()) {
        assert!(header.split(',').any(|h| h == *col), "missing {col}");
    }
    let plain = String::from_utf8(benchmark(&[])).unwrap();
    assert!(!plain.lines().next().unwrap().contains(AB_COLUMNS[0]));
}

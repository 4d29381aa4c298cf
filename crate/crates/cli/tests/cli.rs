use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyq::files::{load_certificate, load_gains, load_verdict, save_json, CertificateFile, GainsFile};
use polyq::{VerdictStatus, SymMatrix};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn polyq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyq")).args(args).output().expect("failed to launch polyq")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("polyq was killed by a signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn detect_holds_and_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["detect", s(&fixture("scalar.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let verdict = load_verdict(dir.path().join("verdict.json")).unwrap();
    assert_eq!(verdict.status, VerdictStatus::Holds);
    let cert = load_certificate(dir.path().join("certificate.json")).unwrap();
    let CertificateFile::Detect(cert) = cert else { panic!("expected a detect certificate") };
    assert_eq!(Some(&cert), verdict.detect_certificate.as_ref());
    let GainsFile::Observer(gains) = load_gains(dir.path().join("gains.json")).unwrap() else {
        panic!("expected observer gains")
    };
    assert_eq!(gains.vertex.len(), 2);

    // Writing what was read gives back the same bytes.
    let copy = dir.path().join("copy.json");
    save_json(&CertificateFile::Detect(cert), &copy).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(dir.path().join("certificate.json")).unwrap());
}

#[test]
fn stab_holds_and_verifies_on_the_grid() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["stab", s(&fixture("scalar.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let CertificateFile::Stab(_) = load_certificate(dir.path().join("certificate.json")).unwrap() else {
        panic!("expected a stab certificate")
    };
    assert!(matches!(load_gains(dir.path().join("gains.json")).unwrap(), GainsFile::Controller(_)));
    let out = polyq(&["verify", s(&fixture("scalar.json")), "--certificate", s(&dir.path().join("certificate.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("grid check passed"));
}

#[test]
fn necessary_condition_failures_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["detect", s(&fixture("unobservable.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(load_verdict(dir.path().join("verdict.json")).unwrap().status, VerdictStatus::FailsNecessary);
    assert!(!dir.path().join("certificate.json").exists());

    let out = polyq(&["stab", s(&fixture("uncontrollable.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn vertex_method_alone_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["stab", s(&fixture("scalar.json")), "--method", "vertex", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let verdict = load_verdict(dir.path().join("verdict.json")).unwrap();
    assert_eq!(verdict.status, VerdictStatus::Unknown);
    assert!(verdict.note.contains("necessary"), "{}", verdict.note);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&polyq(&["frobnicate"])), 1);
    assert_eq!(code(&polyq(&["detect", "/nonexistent/system.json"])), 1);
    assert_eq!(code(&polyq(&["detect", s(&fixture("scalar.json")), "--target-margin", "-1"])), 1);
    assert_eq!(code(&polyq(&["--help"])), 0);
}

#[test]
fn witness_certificate_gives_the_reference_gains() {
    let dir = TempDir::new().unwrap();
    let gains_path = dir.path().join("gains.json");
    let out = polyq(&[
        "synth",
        s(&fixture("scalar.json")),
        "--certificate",
        s(&fixture("scalar_witness_certificate.json")),
        "--out",
        s(&gains_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let GainsFile::Observer(gains) = load_gains(&gains_path).unwrap() else { panic!("expected observer gains") };
    assert!((gains.vertex[0][(0, 0)] + 0.384615).abs() < 1e-6);
    assert!((gains.vertex[1][(0, 0)] + 1.538462).abs() < 1e-6);
}

#[test]
fn tampered_certificate_fails_verification() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["detect", s(&fixture("scalar.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let path = dir.path().join("certificate.json");
    let CertificateFile::Detect(mut cert) = load_certificate(&path).unwrap() else { panic!() };
    cert.p_bar[1] = SymMatrix::scalar(-0.3);
    save_json(&CertificateFile::Detect(cert), &path).unwrap();

    let out = polyq(&["verify", s(&fixture("scalar.json")), "--certificate", s(&path)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("P[2]>0"));
    let out = polyq(&["synth", s(&fixture("scalar.json")), "--certificate", s(&path), "--out", s(&dir.path().join("g.json"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn mismatched_gains_are_rejected() {
    let dir = TempDir::new().unwrap();
    let out = polyq(&["detect", s(&fixture("scalar.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0);
    // Observer gains for a one-vertex, two-state system cannot drive the scalar fixture.
    let bad = dir.path().join("bad_gains.json");
    fs::write(&bad, r#"{"kind": "observer", "L": [[[1.0], [2.0]]]}"#).unwrap();
    let out = polyq(&[
        "simulate",
        s(&fixture("scalar.json")),
        "--certificate",
        s(&dir.path().join("certificate.json")),
        "--gains",
        s(&bad),
        "--out",
        s(&dir.path().join("t.csv")),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn observer_error_decays_within_the_worst_vertex_rate() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("t.csv");
    let out = polyq(&[
        "simulate",
        s(&fixture("scalar.json")),
        "--certificate",
        s(&fixture("scalar_witness_certificate.json")),
        "--steps",
        "100",
        "--x0",
        "1",
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&csv);
    let header = &rows[0];
    let col = header.iter().position(|h| h == "x_1").expect("state column x_1");
    let last: f64 = rows.last().unwrap()[col].parse().unwrap();
    assert_eq!(rows.len(), 102);
    assert!(last.abs() <= 0.461538f64.powi(100) * 10.0);
}

#[test]
fn zero_initial_state_is_clean() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("t.csv");
    let out = polyq(&[
        "simulate",
        s(&fixture("scalar.json")),
        "--certificate",
        s(&fixture("scalar_witness_certificate.json")),
        "--x0",
        "0",
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&csv);
    let col = rows[0].iter().position(|h| h == "V").expect("V column");
    assert!(rows[1..].iter().all(|r| r[col].parse::<f64>().unwrap() == 0.0));
}

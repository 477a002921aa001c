use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crossiris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossiris"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) {
    let out = crossiris(&["synth", "--out-dir", s(dir), "--identities", "4", "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = crossiris(&["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_numbers_are_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let out = crossiris(&["synth", "--out-dir", s(&out_dir), "--identities", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
    let out = crossiris(&["evaluate", "--sigset", "x.csv", "--out-dir", s(&out_dir), "--mislabel-k", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_then_evaluate_writes_a_full_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let report = tmp.path().join("report");
    small_dataset(&data);
    assert!(data.join("enroll/e0000_00.pgm").exists());
    assert!(data.join("probe/p0003_01.pgm").exists());
    assert!(data.join("ground_truth_swaps.csv").exists());

    let out = crossiris(&["evaluate", "--sigset", s(&data.join("sigset.csv")), "--out-dir", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "summary.txt",
        "histogram.csv",
        "far_frr.csv",
        "roc.csv",
        "operating_points.csv",
        "mislabels.csv",
        "scores.csv",
        "distributions_linear.svg",
        "distributions_log.svg",
        "far_frr_linear.svg",
        "far_frr_log.svg",
        "roc.svg",
    ] {
        assert!(report.join(name).exists(), "missing {name}");
    }
    let far_frr = fs::read_to_string(report.join("far_frr.csv")).unwrap();
    assert_eq!(far_frr.lines().count(), 1002);
    let summary = fs::read_to_string(report.join("summary.txt")).unwrap();
    assert!(summary.contains("comparisons: 16 genuine, 48 imposter"), "{summary}");

    // rebuilding from the scores gives the same tables
    let rebuilt = tmp.path().join("rebuilt");
    let out = crossiris(&["report", "--scores", s(&report.join("scores.csv")), "--out-dir", s(&rebuilt)]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["summary.txt", "roc.csv", "far_frr_log.svg"] {
        assert_eq!(fs::read(report.join(name)).unwrap(), fs::read(rebuilt.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn identity_mode_scores_each_probe_once_per_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let report = tmp.path().join("report");
    small_dataset(&data);
    let out = crossiris(&[
        "evaluate",
        "--sigset",
        s(&data.join("sigset.csv")),
        "--out-dir",
        s(&report),
        "--mode",
        "identity",
        "--aggregation",
        "owa",
        "--max-shift",
        "2",
        "--use-masks",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(report.join("summary.txt")).unwrap();
    assert!(summary.contains("comparisons: 8 genuine, 24 imposter"), "{summary}");
}

#[test]
fn missing_image_is_a_data_error_naming_the_template() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    fs::remove_file(data.join("probe/p0002_01.pgm")).unwrap();
    let out = crossiris(&[
        "evaluate",
        "--sigset",
        s(&data.join("sigset.csv")),
        "--out-dir",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p0002_01"));
}

#[test]
fn malformed_sigset_is_a_data_error_and_missing_one_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "[ENROLL]\ne1,A\n").unwrap();
    let out = crossiris(&["evaluate", "--sigset", s(&bad), "--out-dir", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = crossiris(&[
        "evaluate",
        "--sigset",
        s(&tmp.path().join("absent.csv")),
        "--out-dir",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn encode_and_match() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let codes = tmp.path().join("codes");
    let gallery = tmp.path().join("gallery");
    let out = crossiris(&[
        "encode",
        "--out-dir",
        s(&codes),
        "--debug-images",
        s(&data.join("enroll/e0000_00.pgm")),
        s(&data.join("enroll/e0001_00.pgm")),
        s(&data.join("probe/p0000_00.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(codes.join("p0000_00_band.pgm").exists());

    for (id, file) in [("id0000", "e0000_00.ic"), ("id0001", "e0001_00.ic")] {
        fs::create_dir_all(gallery.join(id)).unwrap();
        fs::copy(codes.join(file), gallery.join(id).join(file)).unwrap();
    }
    let out = crossiris(&[
        "match",
        "--probes",
        s(&codes.join("p0000_00.ic")),
        "--gallery",
        s(&gallery),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("probe_id,id0000,id0001"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "p0000_00");
    let own: f64 = row[1].parse().unwrap();
    let other: f64 = row[2].parse().unwrap();
    assert!(own > other, "{own} vs {other}");
}

#[test]
fn encode_reports_unsegmentable_images() {
    let tmp = tempfile::tempdir().unwrap();
    let blank = tmp.path().join("blank.pgm");
    let mut pgm = b"P5\n100 100\n255\n".to_vec();
    pgm.extend(std::iter::repeat_n(128u8, 100 * 100));
    fs::write(&blank, pgm).unwrap();
    let out = crossiris(&["encode", "--out-dir", s(&tmp.path().join("c")), s(&blank)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blank"));
}

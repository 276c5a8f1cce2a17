use std::path::Path;
use std::process::{Command, Output};

fn ie(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ie"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

#[test]
fn oracle_row_for_gamma_point_nine() {
    let dir = tempfile::tempdir().unwrap();
    let o = ie(
        dir.path(),
        &["oracle", "--gamma", "0.9", "--T", "3", "--out", "tab.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("tab.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row[0], 0.9);
    assert!((row[1] - 0.531).abs() < 1e-3);
    assert_eq!(row[2], 0.0);
    assert_eq!(manifest(dir.path())["subcommand"], "oracle");
}

#[test]
fn synth_country_four_shots() {
    let dir = tempfile::tempdir().unwrap();
    let o = ie(
        dir.path(),
        &["synth", "--domain", "country", "--shots", "4", "--out", "c.txt"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("c.txt")).unwrap();
    assert_eq!(text.lines().count(), 303_600);
    let m = manifest(dir.path());
    assert_eq!(m["outputs"].as_object().unwrap().len(), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ie(dir.path(), &["oracle", "--gamma", "0.5", "--bogus"]);
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&ie(dir.path(), &["--help"])), 0);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.txt"), "red, blue,\nblue, red,\n").unwrap();
    let o = ie(
        d,
        &[
            "extract", "--corpus", "c.txt", "--out", "ex", "--blocks", "2", "--width", "8", "--heads", "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ie(d, &["validate", "--store", "ex/macro.repr1"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));

    // Overwrite the last float with NaN.
    let path = d.join("ex/macro.repr1");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    let o = ie(d, &["validate", "--store", "ex/macro.repr1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("non-finite"));

    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    let o = ie(d, &["validate", "--store", "ex/macro.repr1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn pipeline_end_to_end_with_config_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&ie(
            d,
            &["synth", "--domain", "color", "--shots", "2", "--out", "c.txt"]
        )),
        0
    );
    let o = ie(
        d,
        &[
            "extract",
            "--corpus",
            "c.txt",
            "--out",
            "ex",
            "--micro",
            "first_entity",
            "--seed",
            "1",
        ],
    );
    assert_eq!(code(&o), 0);
    std::fs::write(d.join("cfg.json"), r#"{"preset": "desk", "epochs": 3, "bootstrap": 2}"#).unwrap();
    let args = [
        "ie",
        "--macro",
        "ex/macro.repr1",
        "--micro",
        "ex/micro.repr1",
        "--protocol",
        "first_entity",
        "--shot-length",
        "2",
        "--config",
        "cfg.json",
        "--out",
        "run",
        "--workers",
        "2",
    ];
    let o = ie(d, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "mi_matrix.csv",
        "ie_profile.csv",
        "shot_report.csv",
        "ie_profile.svg",
        "run_manifest.json",
    ] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let m = manifest(&d.join("run"));
    assert_eq!(m["config"]["epochs"], 3);
    assert_eq!(m["exit_status"], "ok");
    let first = std::fs::read(d.join("run/mi_matrix.csv")).unwrap();

    // Same flags, resumed: identical outputs.
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    assert_eq!(code(&ie(d, &resumed)), 0);
    assert_eq!(std::fs::read(d.join("run/mi_matrix.csv")).unwrap(), first);

    // An explicit flag beats the config file.
    let mut flagged = args.to_vec();
    let out_value = flagged.len() - 3;
    flagged[out_value] = "run2";
    flagged.extend(["--epochs", "2"]);
    assert_eq!(code(&ie(d, &flagged)), 0);
    assert_eq!(manifest(&d.join("run2"))["config"]["epochs"], 2);

    let o = ie(
        d,
        &[
            "report",
            "--kind",
            "compare",
            "--profile",
            "A=run",
            "B=run2",
            "--out",
            "cmp.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cmp = std::fs::read_to_string(d.join("cmp.csv")).unwrap();
    assert!(cmp.starts_with("Text+Estimator,token0,token1,token2,token3,mean,delta_mean\n"));
    let o = ie(
        d,
        &[
            "report",
            "--kind",
            "shot",
            "--profile",
            "run",
            "--shot-length",
            "2",
            "--out",
            "shots.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(d.join("shots.csv"))
        .unwrap()
        .starts_with("Statistics,shot1,shot2\n"));

    std::fs::write(d.join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    let o = ie(d, &["oracle", "--gamma", "0.5", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn mi_on_single_store() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.txt"), "a b\nb a\na a\nb b\n").unwrap();
    assert_eq!(
        code(&ie(
            d,
            &["extract", "--corpus", "c.txt", "--out", "ex", "--blocks", "3", "--width", "8", "--heads", "2"]
        )),
        0
    );
    let o = ie(
        d,
        &[
            "mi",
            "--store",
            "ex/macro.repr1",
            "--preset",
            "desk",
            "--epochs",
            "2",
            "--tokens",
            "1..2",
            "--out",
            "mi",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.join("mi/mi_matrix.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",ok,")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.contains(",skipped,")).count(), 2);
}

#[test]
fn score_generations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("g.txt"), "Egypt\nFrance\nUnited States of America\n").unwrap();
    let o = ie(
        d,
        &[
            "score",
            "--generations",
            "g.txt",
            "--domain",
            "country",
            "--context",
            "France, Mexico,",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let score: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!((score - 1.0 / 3.0).abs() < 1e-4);
}

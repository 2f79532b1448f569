use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const REFERENCE: &str = include_str!("../configs/reference.toml");

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn nzlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nzlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = scratch("unknown");
    let cfg = write_config(dir.as_path(), &format!("bogus = 1\n{REFERENCE}"));
    let out = nzlab(&["free", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let nested = REFERENCE.replace("threshold = 0.05", "threshold = 0.05\nthreshhold = 0.1");
    let cfg = write_config(dir.as_path(), &nested);
    assert_eq!(nzlab(&["free", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn missing_config_and_bad_values() {
    let dir = scratch("missing");
    let out = nzlab(&["free", "--config", dir.join("nope.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.as_path(), &REFERENCE.replace("lambdas = [0.4, 0.2, 0.1, 0.05]", "lambdas = [0.1, 0.2]"));
    assert_eq!(nzlab(&["free", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn window_violation_exits_3() {
    let dir = scratch("window");
    let cfg = write_config(dir.as_path(), &REFERENCE.replace("stop = 1.0", "stop = 100.0"));
    let out = nzlab(&["converge", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn free_run_writes_sorted_csv_and_passes_check() {
    let dir = scratch("free");
    let out_dir = dir.display().to_string();
    let out = nzlab(&["free", "--out", &out_dir, "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let csv = fs::read_to_string(dir.join("free.csv")).unwrap();
    assert!(!csv.contains('\r') && csv.ends_with('\n'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("experiment,lambda,tau,metric,value,fingerprint"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    let fp = rows[0][5];
    assert_eq!(fp.len(), 16);
    for r in &rows {
        assert_eq!(r.len(), 6);
        assert_eq!(r[5], fp);
        let v: f64 = r[4].parse().unwrap();
        assert!(v.is_finite());
        let mantissa = r[4].trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{}", r[4]);
    }

    let again = scratch("free_again");
    let again_dir = again.display().to_string();
    assert_eq!(nzlab(&["free", "--out", &again_dir]).status.code(), Some(0));
    assert_eq!(csv, fs::read_to_string(again.join("free.csv")).unwrap());

    let seeded = scratch("free_seed");
    let seeded_dir = seeded.display().to_string();
    assert_eq!(nzlab(&["free", "--out", &seeded_dir, "--seed", "12"]).status.code(), Some(0));
    let other = fs::read_to_string(seeded.join("free.csv")).unwrap();
    assert_ne!(other.lines().nth(1).unwrap().rsplit(',').next(), Some(fp));
}

#[test]
fn json_output() {
    let dir = scratch("json");
    let out_dir = dir.display().to_string();
    let out = nzlab(&["free", "--out", &out_dir, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.join("free.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = v.as_array().unwrap();
    assert!(!rows.is_empty());
    assert_eq!(rows[0]["experiment"], "free");
    assert!(rows[0]["value"].as_str().unwrap().parse::<f64>().is_ok());
}

#[test]
fn bad_flags_are_rejected() {
    assert_eq!(nzlab(&["free", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(nzlab(&["nonsense"]).status.code(), Some(2));
}

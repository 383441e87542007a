use std::path::Path;
use std::process::{Command, Output};

fn fluxrnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluxrnn")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn config_prints_round_trippable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluxrnn(dir.path(), &["--seed", "7", "config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("seed = 7\n"));
    let cfg = fluxrnn::config::PipelineConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg.seed, 7);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[training]\nepocs = 3\n").unwrap();
    let out = fluxrnn(dir.path(), &["--config", "c.toml", "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: "));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[extremes]\nquantile = 0.7\n").unwrap();
    let out = fluxrnn(dir.path(), &["--config", "c.toml", "extremes"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overlapping_split_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[split]\ntrain_years = [2016, 2017]\ntest_years = [2017]\n").unwrap();
    let out = fluxrnn(dir.path(), &["--config", "c.toml", "preprocess"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluxrnn(dir.path(), &["--config", "absent.toml", "config"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_site_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[[sites]]\nid = \"DE-Hai\"\nlatitude = 51.08\nlongitude = 10.45\ncsv = \"nowhere.csv\"\n";
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    let out = fluxrnn(dir.path(), &["--config", "c.toml", "--out", "o", "preprocess"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn malformed_site_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "date,gpp,qc\n2019-01-01,1,1\n2019-01-03,1,1\n").unwrap();
    let config = "[[sites]]\nid = \"S\"\nlatitude = 45\nlongitude = 0\ncsv = \"s.csv\"\n";
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    let out = fluxrnn(dir.path(), &["--config", "c.toml", "--out", "o", "radiation"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("s.csv:3"), "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluxrnn(dir.path(), &["--out", "o", "synth"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = fluxrnn(dir.path(), &["--out", "o", "preprocess"]);
    assert!(out.status.success(), "{}", stderr(&out));
    std::fs::write(dir.path().join("o/model.ckpt"), b"NOTACKPT........").unwrap();
    let out = fluxrnn(dir.path(), &["--out", "o", "evaluate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluxrnn(dir.path(), &["fly"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn radiation_writes_one_file_per_site() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluxrnn(dir.path(), &["--out", "o", "synth"]);
    assert!(out.status.success());
    let out = fluxrnn(dir.path(), &["--out", "o", "radiation"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("o/radiation_SYN-1.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,doy,toa_mean,clearsky_mean"));
    assert_eq!(lines.count(), 1827);
}

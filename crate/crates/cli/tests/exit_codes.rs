//! Exit codes and messages of the `gdp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gdp(args: &[&str], out: &Path, config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gdp"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "format_version = 1\n\n[syngen]\nprofiles = [\"thyroid_like\"]\n\n[syngen.cohort]\nn_patients = 120\n\n{body}"
    );
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn syngen_then_pretrain_succeeds_and_prints_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[pretrain.train]\nepochs = 1\n");
    let out = dir.path().join("run");
    let s = gdp(&["syngen", "--seed", "3"], &out, Some(&cfg));
    assert_eq!(s.status.code(), Some(0), "{}", stderr(&s));
    let p = gdp(&["pretrain", "--seed", "3", "--cells", "ns-trad"], &out, Some(&cfg));
    assert_eq!(p.status.code(), Some(0), "{}", stderr(&p));
    let stdout = String::from_utf8_lossy(&p.stdout);
    assert!(stdout.starts_with("pretrain ok: manifest "), "{stdout}");
    assert!(out.join("models/ns-trad.gdpm").exists());
    assert!(!out.join("models/seq-trad.gdpm").exists());
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[downstream]\nbootstrapz = 50\n");
    let o = gdp(&["syngen"], &dir.path().join("run"), Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bootstrapz"), "{}", stderr(&o));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn out_of_range_config_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[pretrain]\nsplit_ratio = 1.5\n");
    let o = gdp(&["syngen"], &dir.path().join("run"), Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split_ratio"), "{}", stderr(&o));
}

#[test]
fn unknown_cell_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gdp(&["pretrain", "--cells", "seq-morse"], &dir.path().join("run"), None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = gdp(&["pretrain"], &dir.path().join("run"), None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("pretrain_visits.csv"), "{}", stderr(&o));
}

#[test]
fn exploding_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[pretrain.train]\noptimizer = \"sgd\"\nlearning_rate = 1e300\nclip_norm = 0.0\nepochs = 2\n",
    );
    let out = dir.path().join("run");
    assert_eq!(gdp(&["syngen"], &out, Some(&cfg)).status.code(), Some(0));
    let o = gdp(&["pretrain", "--cells", "ns-trad"], &out, Some(&cfg));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
    assert!(!out.join("models").exists());
}

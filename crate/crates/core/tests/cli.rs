use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wildsphere::pipeline::Manifest;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wildsphere")).args(args).env("WILDSPHERE_THREADS", "1").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn build_writes_stages_manifest_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["build", "--out", path(&out), "--depth", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load(&out).unwrap();
    let mut stages: Vec<usize> = m.stages().filter_map(|a| a.stage).collect();
    stages.dedup();
    assert_eq!(stages, vec![1, 2, 3]);
    for k in 1..=3 {
        assert!(out.join(format!("stage_{k}.obj")).exists());
        assert!(out.join(format!("stage_{k}.ply")).exists());
    }
    assert!(out.join("ledger.json").exists() && out.join("manifest.json").exists());
    assert!(m.ledger_pass);
    assert!(String::from_utf8_lossy(&o.stdout).contains("energy ledger"));
}

#[test]
fn builds_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(cli(&["build", "--out", path(d), "--depth", "2", "--format", "json"]).status.success());
    }
    for f in ["manifest.json", "ledger.json", "ledger.txt", "sites.json", "stage_1.json", "stage_2.json", "tree.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn verify_export_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(cli(&["build", "--out", path(&out), "--depth", "2"]).status.success());
    let o = cli(&["verify", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.verification.as_ref().map(|v| v.pass), Some(true));
    assert!(out.join("verify.json").exists());

    let dest = dir.path().join("exported");
    let o = cli(&["export", "--out", path(&out), "--format", "json", "--dest", path(&dest)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("round-trip ok").count(), 2, "{text}");
    assert!(dest.join("stage_2.json").exists());

    let o = cli(&["report", "--out", path(&out)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("energy ledger"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["build", "--out", path(&out), "--schedule", "geometric:0.1,0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverges"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 1\ndepth = 2\ncolour = \"red\"\n").unwrap();
    let o = cli(&["build", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    fs::write(&cfg, "schema_version = 1\n[schedule]\nkind = \"geometric\"\na = 0.1\nratio = 1.0\n").unwrap();
    assert_eq!(cli(&["build", "--config", path(&cfg), "--out", path(&out)]).status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn missing_build_is_a_run_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["report", "--out", path(&dir.path().join("nothing"))]);
    assert_eq!(o.status.code(), Some(3));
}

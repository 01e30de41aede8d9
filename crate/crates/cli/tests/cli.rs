use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
[synth]
n_subjects = 3
trials_per_subject = 2
duration_s = 12.0
[cv]
n_folds = 3
[selection.forest]
n_trees = 20
[model]
kind = "RF"
n_trees = 20
"#;

fn biozbp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biozbp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn pipeline_is_deterministic_and_replayable() {
    let dir = setup();
    let d = dir.path();
    ok(&biozbp(d, &["--config", "small.toml", "pipeline", "--out", "a"]));
    ok(&biozbp(d, &["--config", "small.toml", "pipeline", "--out", "b"]));
    ok(&biozbp(d, &["--config", "a/manifest.toml", "pipeline", "--out", "c"]));
    for file in ["report_sbp.json", "report_dbp.json", "features.csv", "report.txt", "ranking_sbp.csv"] {
        let a = fs::read(d.join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(d.join("b").join(file)).unwrap(), "{file}");
        assert_eq!(a, fs::read(d.join("c").join(file)).unwrap(), "{file}");
    }
    let manifest = fs::read_to_string(d.join("a/manifest.toml")).unwrap();
    for key in ["seed = 5", "shuffle_seed = 5", "entropy_r_fraction", "window_len", "n_block"] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn staged_commands_chain() {
    let dir = setup();
    let d = dir.path();
    ok(&biozbp(d, &["--config", "small.toml", "--format", "bin", "synth", "--out", "syn"]));
    assert!(d.join("syn/S03_T02.bin").exists() && d.join("syn/S03_T02.truth.json").exists());
    ok(&biozbp(
        d,
        &["--config", "small.toml", "--format", "bin", "extract", "--raw-dir", "syn", "--labels", "syn/labels.csv", "--out", "ext"],
    ));
    ok(&biozbp(
        d,
        &["--config", "small.toml", "--target", "sbp", "select", "--features", "ext/features.csv", "--k", "10", "--out", "sel"],
    ));
    let ranking = fs::read_to_string(d.join("sel/ranking_sbp.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 43);
    assert!(!d.join("sel/ranking_dbp.csv").exists());
    ok(&biozbp(d, &["--config", "small.toml", "train", "--features", "sel/selected_sbp.csv", "--model", "lr", "--out", "m"]));
    assert!(d.join("m/model_sbp.json").exists());
    let eval = biozbp(d, &["--config", "small.toml", "evaluate", "--features", "ext/features.csv", "--k", "10", "--out", "ev"]);
    ok(&eval);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("BHS"));
    let rep = biozbp(d, &["report", "--input", "ev"]);
    ok(&rep);
    assert_eq!(fs::read(d.join("ev/report.txt")).unwrap(), rep.stdout);
    ok(&biozbp(d, &["--format", "bin", "demod", "--input", "syn/S01_T01.bin", "--out", "dm"]));
    ok(&biozbp(d, &["preprocess", "--input", "dm", "--out", "pp"]));
    let head = fs::read_to_string(d.join("pp/ecg.csv")).unwrap();
    assert!(head.lines().next().unwrap().contains("sg(poly_order=3"));
}

#[test]
fn failures_name_their_stage() {
    let dir = setup();
    let d = dir.path();
    let out = biozbp(d, &["demod", "--input", "missing.csv", "--out", "x"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage=dataset-io"));

    fs::write(d.join("bad.toml"), "manifest_version = 99\n").unwrap();
    let out = biozbp(d, &["--config", "bad.toml", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage=config"));

    ok(&biozbp(d, &["--config", "small.toml", "synth", "--out", "syn", "--subjects", "1", "--trials", "1"]));
    ok(&biozbp(d, &["--config", "small.toml", "extract", "--raw-dir", "syn", "--labels", "syn/labels.csv", "--out", "e"]));
    let out = biozbp(d, &["select", "--features", "e/features.csv", "--k", "0", "--out", "s"]);
    assert_eq!(out.status.code(), Some(9));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage=featsel"));
}

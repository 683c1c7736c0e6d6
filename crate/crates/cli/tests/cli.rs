use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn maskbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskbeam")).args(args).output().expect("spawn maskbeam")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn grad_check_l2_seed_7_passes() {
    let o = maskbeam(&["grad-check", "--loss", "l2", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("loss=l2"), "{out}");
    assert!(out.contains("seed=7"), "{out}");
    assert!(out.contains("max_rel_err="), "{out}");
    assert!(out.trim_end().ends_with("PASS"), "{out}");
}

#[test]
fn report_on_empty_directory_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = maskbeam(&["report", "--out", p(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no runs found"), "{}", stderr(&o));
}

#[test]
fn config_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"count\": 1,\n  \"colour\": 3\n}\n").unwrap();
    let o = maskbeam(&["mix", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("unknown field `colour`"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn mix_then_evaluate_writes_a_row_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("runs").join("smoke");
    let cfg = dir.path().join("scenes.json");
    fs::write(&cfg, r#"{"count": 3, "scene": {"duration": 1.0}}"#).unwrap();

    let o = maskbeam(&["mix", "--config", p(&cfg), "--seed", "11", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for sub in ["scenes", "masks", "models", "metrics"] {
        assert!(run.join(sub).is_dir(), "missing {sub}");
    }
    assert!(run.join("scenes/scene_0002/mixture.wav").is_file());

    let o = maskbeam(&["evaluate", "--method", "oracle-psm", "--beamformer", "mvdr", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(run.join("metrics/eval_oracle-psm.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("{i},oracle-psm,mvdr,")), "{row}");
    }

    let o = maskbeam(&["report", "--out", p(&dir.path().join("runs"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("mixture"), "{out}");
    assert!(out.contains("oracle-psm"), "{out}");
    assert!(dir.path().join("runs/report.csv").is_file());
}

#[test]
fn train_then_beamform_with_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mix_cfg = dir.path().join("scenes.json");
    fs::write(&mix_cfg, r#"{"count": 1, "scene": {"duration": 1.0}}"#).unwrap();
    assert!(maskbeam(&["mix", "--config", p(&mix_cfg), "--out", p(&run)]).status.success());

    let train_cfg = dir.path().join("train.json");
    fs::write(&train_cfg, r#"{"steps": 5, "hidden": 8}"#).unwrap();
    let o = maskbeam(&["train", "--config", p(&train_cfg), "--loss", "l1", "--seed", "3", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("models/l1.mbem").is_file());
    let curve = fs::read_to_string(run.join("metrics/train_l1.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);

    let o = maskbeam(&["beamform", "--method", "l1", "--beamformer", "mwf-tv", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("scenes/scene_0000/l1_mwf-tv_1.wav").is_file());
    assert!(run.join("masks/scene_0000_l1.mask").is_file());

    // PSA has no model in this run
    let o = maskbeam(&["beamform", "--method", "psa", "--out", p(&run)]);
    assert!(!o.status.success());
}

#[test]
fn oracle_masks_and_bank_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("scenes.json");
    fs::write(&cfg, r#"{"scene": {"duration": 0.5}}"#).unwrap();
    assert!(maskbeam(&["mix", "--config", p(&cfg), "--out", p(&run)]).status.success());
    let o = maskbeam(&["oracle-masks", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(run.join("masks/scene_0000_oracle-psm.mask")).unwrap();
    let dims: Vec<u32> = bytes[..12].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(dims[1], 129);
    assert_eq!(dims[2], 2);
    assert_eq!(bytes.len(), 12 + 4 * (dims[0] * dims[1] * dims[2]) as usize);

    let o = maskbeam(&["beamform", "--beamformer", "gev", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("scenes/scene_0000/oracle-psm_gev.bank").is_file());
    assert!(run.join("scenes/scene_0000/oracle-psm_gev_0.wav").is_file());
}

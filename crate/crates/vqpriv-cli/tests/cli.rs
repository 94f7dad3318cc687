//! End-to-end tests of the `vqpriv` binary: subcommands, file outputs, and
//! exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vqpriv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqpriv"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL_CONFIG: &str = "\
seed = 11
data.num_speakers = 6
data.num_content_classes = 5
data.feature_dim = 8
data.utterances_per_speaker = 5
data.frames_per_utterance = 30
encoder.hidden_dims = 12,12
encoder.bottleneck_dim = 6
train.epochs = 3
train.batch_size = 6
train.codebook_size = 8
sweep.codebook_sizes = 4,8
split.train_utterances_per_speaker = 3
split.enroll_frames_per_speaker = 30
bootstrap.resamples = 50
";

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

#[test]
fn sweep_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    for out in ["run1", "run2"] {
        let output = vqpriv(
            &["sweep", "--config", cfg.to_str().unwrap(), "--out", out],
            dir.path(),
        );
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let csv1 = fs::read(dir.path().join("run1/report.csv")).unwrap();
    let csv2 = fs::read(dir.path().join("run2/report.csv")).unwrap();
    assert_eq!(csv1, csv2);
    let json1 = fs::read(dir.path().join("run1/report.json")).unwrap();
    let json2 = fs::read(dir.path().join("run2/report.json")).unwrap();
    assert_eq!(json1, json2);

    let csv = String::from_utf8(csv1).unwrap();
    assert_eq!(csv.lines().count(), 4, "header + baseline + v4 + v8:\n{csv}");
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert!(vqpriv(&["sweep", "--config", cfg, "--out", "a"], dir.path())
        .status
        .success());
    assert!(vqpriv(
        &["sweep", "--config", cfg, "--out", "b", "--seed", "999"],
        dir.path()
    )
    .status
    .success());
    let a = fs::read(dir.path().join("a/report.csv")).unwrap();
    let b = fs::read(dir.path().join("b/report.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn parallel_jobs_match_serial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert!(vqpriv(&["sweep", "--config", cfg, "--out", "ser"], dir.path())
        .status
        .success());
    assert!(vqpriv(
        &["sweep", "--config", cfg, "--out", "par", "--jobs", "3"],
        dir.path()
    )
    .status
    .success());
    assert_eq!(
        fs::read(dir.path().join("ser/report.csv")).unwrap(),
        fs::read(dir.path().join("par/report.csv")).unwrap()
    );
}

#[test]
fn report_rebuild_matches_original() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert!(vqpriv(&["sweep", "--config", cfg, "--out", "orig"], dir.path())
        .status
        .success());
    let output = vqpriv(
        &[
            "report",
            "--raw",
            "orig/raw",
            "--config",
            cfg,
            "--out",
            "rebuilt",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert_eq!(
        fs::read(dir.path().join("orig/report.csv")).unwrap(),
        fs::read(dir.path().join("rebuilt/report.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("orig/report.json")).unwrap(),
        fs::read(dir.path().join("rebuilt/report.json")).unwrap()
    );
}

#[test]
fn gen_data_writes_csv_with_expected_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let output = vqpriv(
        &[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "data.csv",
        ],
        dir.path(),
    );
    assert!(output.status.success());
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("utterance_id,speaker_id,group,frame_index,content_label,f0"));
    // 6 speakers x 5 utterances x 30 frames
    assert_eq!(text.lines().count(), 1 + 6 * 5 * 30);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let output = vqpriv(
        &["train", "--config", cfg, "--out", "model_dir"],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(dir.path().join("model_dir/model.json").exists());
    let curve = fs::read_to_string(dir.path().join("model_dir/curve.csv")).unwrap();
    assert!(curve
        .lines()
        .next()
        .unwrap()
        .starts_with("epoch,utility_loss,vq_loss"));
    assert_eq!(curve.lines().count(), 1 + 3, "3 epochs of curve data");

    let output = vqpriv(
        &[
            "eval",
            "--model",
            "model_dir/model.json",
            "--config",
            cfg,
            "--out",
            "eval_out",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = fs::read_to_string(dir.path().join("eval_out/eval_report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("v8,8,"));
}

#[test]
fn eval_matches_the_corresponding_sweep_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert!(vqpriv(&["sweep", "--config", cfg, "--out", "sw"], dir.path())
        .status
        .success());
    assert!(vqpriv(&["train", "--config", cfg, "--out", "md"], dir.path())
        .status
        .success());
    assert!(vqpriv(
        &[
            "eval",
            "--model",
            "md/model.json",
            "--config",
            cfg,
            "--out",
            "ev"
        ],
        dir.path()
    )
    .status
    .success());

    let sweep_csv = fs::read_to_string(dir.path().join("sw/report.csv")).unwrap();
    let eval_csv = fs::read_to_string(dir.path().join("ev/eval_report.csv")).unwrap();
    let sweep_v8 = sweep_csv
        .lines()
        .find(|l| l.starts_with("v8,"))
        .expect("sweep has a v8 row");
    assert_eq!(eval_csv.lines().nth(1).unwrap(), sweep_v8);
}

#[test]
fn show_config_echoes_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let output = vqpriv(
        &["show-config", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("train.lambda_reg = 0.25"));
    assert!(text.contains("seed = 11"));
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let output = vqpriv(
        &["sweep", "--config", "nope.cfg", "--out", "x"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nope.cfg"));
}

#[test]
fn unknown_config_key_exits_1_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "lamda = 0.3\n").unwrap();
    let output = vqpriv(
        &["sweep", "--config", path.to_str().unwrap(), "--out", "x"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("lamda"));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    // A file where the output directory should go.
    fs::write(dir.path().join("blocked"), "occupied").unwrap();
    let output = vqpriv(
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "blocked/sub",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn divergent_training_marks_rows_aborted_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diverge.cfg");
    fs::write(
        &path,
        format!("{SMALL_CONFIG}train.learning_rate = 1e300\n"),
    )
    .unwrap();
    let output = vqpriv(
        &[
            "sweep",
            "--config",
            path.to_str().unwrap(),
            "--out",
            "div",
        ],
        dir.path(),
    );
    assert!(output.status.success());
    let csv = fs::read_to_string(dir.path().join("div/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "aborted rows are kept:\n{csv}");
    for line in csv.lines().skip(1) {
        assert!(line.contains("[aborted]"), "{line}");
    }
}

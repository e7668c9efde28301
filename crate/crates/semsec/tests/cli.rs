//! End-to-end checks of the `semsec` binary: config generation, training
//! artifacts, checkpoint evaluation, and exit codes.

use std::process::Command;

fn semsec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semsec"))
}

fn tiny_config_toml() -> String {
    let mut cfg = semsec::harness::ExperimentConfig::default();
    cfg.data.height = 16;
    cfg.data.width = 16;
    cfg.data.channels = 3;
    cfg.data.train_images = 48;
    cfg.data.eval_images = 16;
    cfg.data.test_images = 24;
    cfg.arch.codec_hidden = 24;
    cfg.arch.tje_hidden = 12;
    cfg.arch.gje_hidden = 12;
    cfg.train.batch_size = 16;
    cfg.train.epoch_scale = 0.01;
    cfg.train.decision_steps = 2;
    cfg.train.epochs_per_decision = 1;
    cfg.agent.batch_size = 2;
    cfg.agent.warmup = 2;
    cfg.agent.actor_hidden = vec![16];
    cfg.agent.critic_hidden = vec![16];
    cfg.to_toml()
}

#[test]
fn init_config_writes_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    let status = semsec()
        .args(["init-config", "--config"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed: semsec::harness::ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(parsed, semsec::harness::ExperimentConfig::default());
}

#[test]
fn selftest_exits_zero_and_prints_one_line_per_check() {
    let out = semsec().arg("selftest").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let pass_lines = text.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(pass_lines >= 6, "expected the oracle checks, got:\n{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 0);
}

#[test]
fn invalid_config_exits_one_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[agent]\ngamma = 1.5\n").unwrap();
    let out = semsec()
        .args(["train", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("gamma"), "diagnostic missing: {err}");
}

#[test]
fn train_then_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.toml");
    std::fs::write(&cfg_path, tiny_config_toml()).unwrap();
    let out_dir = dir.path().join("run");

    let out = semsec()
        .args(["train", "--seed", "3", "--config"])
        .arg(&cfg_path)
        .args(["--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for artifact in [
        "epochs.csv",
        "decisions.csv",
        "report.toml",
        "stage1/model.toml",
        "stage5/se.net",
        "stage5/model.toml",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }

    let out = semsec()
        .args(["eval", "--seed", "3", "--config"])
        .arg(&cfg_path)
        .args(["--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PSNR_leg"), "unexpected eval output: {text}");
}

#[test]
fn sweep_snr_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.toml");
    std::fs::write(&cfg_path, tiny_config_toml()).unwrap();
    let out_dir = dir.path().join("sweep");

    let out = semsec()
        .args(["sweep-snr", "--seed", "4", "--snr-grid", "0,10", "--config"])
        .arg(&cfg_path)
        .args(["--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("sweep_snr.csv")).unwrap();
    assert!(csv.starts_with("x,psnr_leg_db,psnr_eve_db,gap_db,seed\n"));
    assert_eq!(csv.lines().count(), 3, "expected 2 rows: {csv}");
    let svg = std::fs::read_to_string(out_dir.join("sweep_snr.svg")).unwrap();
    assert!(svg.starts_with("<?xml"));
}

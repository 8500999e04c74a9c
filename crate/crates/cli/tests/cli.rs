use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gridflow");

fn tiny_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"seed = 5

[city]
height = 32
width = 32
days_first_half = 2
days_second_half = 2

[arch]
depth = 2
base_channels = 4
growth = 4

[train]
learning_rate = 0.002
pretrain_epochs = 1
batch_size = 4
sample_stride = 48

[paths]
data_dir = "{0}/data"
checkpoint = "{0}/model.gfck"
masks = "{0}/masks.gfmk"
reports = "{0}/runs"
"#,
        dir.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// The run directory a command reported.
fn run_dir(stdout: &str) -> PathBuf {
    let line = stdout.lines().find_map(|l| l.strip_prefix("run directory = ")).expect("run directory line");
    PathBuf::from(line)
}

fn csv_row<'a>(text: &'a str, label: &str) -> Vec<&'a str> {
    text.lines().skip(1).find(|l| l.starts_with(label)).expect("row").split(',').collect()
}

#[test]
fn composed_pipeline_matches_ablation_final_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["generate", "--config", cfg]);
    ok(&["mask", "--config", cfg]);
    ok(&["train", "--config", cfg, "--two-stage"]);
    let eval = run_dir(&ok(&["evaluate", "--config", cfg, "--mask"]));
    let ablate = run_dir(&ok(&["ablate", "--config", cfg]));

    let eval_csv = fs::read_to_string(eval.join("evaluation.csv")).unwrap();
    let table = fs::read_to_string(ablate.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    let model = csv_row(&eval_csv, "model,");
    let final_row = csv_row(&table, "Final model,");
    assert_eq!(&final_row[..3], &["Final model", "true", "true"]);
    // overall then six per-timestamp values, compared as printed
    assert_eq!(&model[1..8], &final_row[3..10]);
}

#[test]
fn finetune_after_train_equals_two_stage_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let split = tmp.path().join("split.gfck");
    let split = split.to_str().unwrap();
    ok(&["generate", "--config", cfg]);
    ok(&["train", "--config", cfg, "--two-stage"]);
    ok(&["train", "--config", cfg, "--single-stage", "--checkpoint", split]);
    ok(&["finetune", "--config", cfg, "--checkpoint", split]);
    let joint = fs::read(tmp.path().join("model.gfck")).unwrap();
    assert_eq!(joint, fs::read(split).unwrap());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["generate", "--config", cfg]);
    let day = fs::read(tmp.path().join("data/day_000.gfmv")).unwrap();
    ok(&["generate", "--config", cfg]);
    assert_eq!(day, fs::read(tmp.path().join("data/day_000.gfmv")).unwrap());

    ok(&["mask", "--config", cfg]);
    let mut checkpoints = Vec::new();
    let mut panels = Vec::new();
    for _ in 0..2 {
        ok(&["train", "--config", cfg]);
        checkpoints.push(fs::read(tmp.path().join("model.gfck")).unwrap());
        let dir = run_dir(&ok(&["report", "--config", cfg, "--sample", "3"]));
        let mut files: Vec<_> = fs::read_dir(dir.join("panels")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        assert_eq!(files.len(), 18);
        panels.push(files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    assert_eq!(panels[0], panels[1]);

    let a = run_dir(&ok(&["ablate", "--config", cfg, "--epochs", "1"]));
    let b = run_dir(&ok(&["ablate", "--config", cfg, "--epochs", "1"]));
    assert_ne!(a, b);
    for name in ["ablation.csv", "ablation.txt", "loss_curve.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{}", name);
    }
}

#[test]
fn every_run_echoes_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = ok(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "11"]);
    assert!(out.contains("seed = 11"));
    let dir = run_dir(&out);
    let echoed = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(echoed.starts_with("seed = 11\n"));
    assert!(dir.file_name().unwrap().to_str().unwrap().len() > 13);
}

#[test]
fn usage_and_config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let out = run(&["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));

    let cfg = tiny_config(tmp.path());
    // no scenario generated yet
    assert_eq!(run(&["mask", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn runtime_failures_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["generate", "--config", cfg]);
    fs::write(tmp.path().join("data/day_000.gfmv"), b"GFMV\x01").unwrap();
    assert_eq!(run(&["mask", "--config", cfg]).status.code(), Some(1));
}

#[test]
fn help_documents_every_flag() {
    let subcommands = ["generate", "mask", "train", "finetune", "predict", "evaluate", "ablate", "report"];
    for sub in subcommands {
        let out = ok(&[sub, "--help"]);
        for flag in ["--config", "--seed", "--data-dir", "--checkpoint", "--masks", "--reports"] {
            assert!(out.contains(flag), "{} --help lacks {}", sub, flag);
        }
    }
    assert!(ok(&["train", "--help"]).contains("--two-stage"));
    assert!(ok(&["evaluate", "--help"]).contains("--mask"));
    let top = ok(&["--help"]);
    for sub in subcommands {
        assert!(top.contains(sub));
    }
}

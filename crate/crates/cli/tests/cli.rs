//! End-to-end checks of the `umafd` binary: exit codes, artifacts on disk,
//! idempotent reruns and the seed override.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn umafd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_umafd"));
    c.env_remove("UMAFD_SEED");
    c
}

const TINY_CONFIG: &str = "\
train.epochs = 1
synth.n_train_pairs = 3
synth.n_test_depth = 3
synth.t = 8
synth.h = 16
synth.w = 16
backbone.stage1_channels = 4
backbone.embedding_dim = 6
backbone.n_stages = 2
";

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, TINY_CONFIG).unwrap();
    p
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_dataset(dir: &Path) -> std::path::PathBuf {
    let cfg = write_config(dir);
    let data = dir.join("data");
    let out = umafd().args(["synth", "--out"]).arg(&data).arg("--config").arg(&cfg).output().unwrap();
    assert_success(&out);
    data
}

#[test]
fn synth_succeeds_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let manifest = data.join("manifest.csv");
    assert!(manifest.exists());
    let first = fs::read(&manifest).unwrap();

    let cfg = dir.path().join("run.cfg");
    let data2 = dir.path().join("data2");
    let out = umafd().args(["synth", "--out"]).arg(&data2).arg("--config").arg(&cfg).output().unwrap();
    assert_success(&out);
    assert_eq!(first, fs::read(data2.join("manifest.csv")).unwrap());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = umafd().arg("synth").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_protocol_is_a_usage_error() {
    let out = umafd().args(["train", "--data", "x", "--protocol", "bogus", "--out", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_fails_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.epocsh = 2\n").unwrap();
    let out = umafd()
        .args(["synth", "--out"])
        .arg(dir.path().join("d"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epocsh"));
}

#[test]
fn train_umafd_writes_a_single_row_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = dir.path().join("run_umafd");
    let out = umafd()
        .args(["train", "--protocol", "umafd", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&out);
    let report = fs::read_to_string(run.join("report_umafd.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "protocol,seed,accuracy,precision,recall,f1,auc");
    assert!(lines[1].starts_with("umafd,0,"));
    assert!(run.join("train_log.csv").exists());
}

#[test]
fn eval_needs_an_existing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = dir.path().join("run_eval");

    let out = umafd()
        .args(["eval", "--protocol", "baseline", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    let t = umafd()
        .args(["train", "--protocol", "baseline", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&t);
    let first_report = fs::read(run.join("report_baseline.csv")).unwrap();

    let e = umafd()
        .args(["eval", "--protocol", "baseline", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&e);
    assert_eq!(first_report, fs::read(run.join("report_baseline.csv")).unwrap());
}

#[test]
fn ablate_writes_six_stage_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = dir.path().join("abl");
    let out = umafd()
        .args(["ablate", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&out);
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "stage,accuracy,precision,recall,f1,auc");
    for (i, stage) in ["V-01", "V-02", "V-03", "V-04", "V-05", "V-06"].iter().enumerate() {
        assert!(lines[i + 1].starts_with(stage), "row {i}: {}", lines[i + 1]);
    }
}

#[test]
fn export_embeddings_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = dir.path().join("run_b");
    let t = umafd()
        .args(["train", "--protocol", "baseline", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&t);

    let ckpt = run.join("ckpt_epoch_000.bin");
    let export = |name: &str| {
        let f = dir.path().join(name);
        let out = umafd()
            .args(["export-embeddings", "--ckpt"])
            .arg(&ckpt)
            .arg("--data")
            .arg(&data)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&f)
            .output()
            .unwrap();
        assert_success(&out);
        fs::read(&f).unwrap()
    };
    let a = export("emb_a.csv");
    let b = export("emb_b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 4, "3 depth test clips + header");

    let missing = umafd()
        .args(["export-embeddings", "--ckpt"])
        .arg(run.join("ckpt_epoch_099.bin"))
        .arg("--data")
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("emb_c.csv"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn umafd_seed_env_overrides_the_train_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = dir.path().join("run_seeded");
    let out = umafd()
        .env("UMAFD_SEED", "7")
        .args(["train", "--protocol", "baseline", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_success(&out);
    let report = fs::read_to_string(run.join("report_baseline.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("baseline,7,"), "{report}");
}

#[test]
fn help_lists_every_subcommand() {
    let out = umafd().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "train", "eval", "ablate", "export-embeddings"] {
        assert!(text.contains(cmd), "missing {cmd} in help");
    }
}

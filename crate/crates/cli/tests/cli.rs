use std::path::Path;
use std::process::{Command, Output};

fn xidiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xidiff"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xidiff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 16] = [
    "--set", "dataset.size=64",
    "--set", "model.hidden=[8]",
    "--set", "schedule.horizon=10",
    "--set", "optimizer.batch_size=8",
    "--set", "optimizer.max_steps=4",
    "--set", "eval.every_steps=2",
    "--set", "eval.n_generate=16",
    "--set", "eval.wd_subsample=16",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_pairs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--set", "dataset.size=100", "--pairs", "6", "--out", s(d)]);
    }
    for seed in 0..6 {
        for split in ["train", "test"] {
            let name = format!("{split}_seed{seed}.csv");
            let x = std::fs::read(a.join(&name)).unwrap();
            assert_eq!(x, std::fs::read(b.join(&name)).unwrap());
            assert_eq!(String::from_utf8_lossy(&x).lines().count(), 101);
        }
    }
    assert_ne!(
        std::fs::read(a.join("train_seed0.csv")).unwrap(),
        std::fs::read(a.join("train_seed1.csv")).unwrap()
    );
}

#[test]
fn schedule_csv_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    ok(&["schedule", "--set", "model.variant=proposed", "--set", "schedule.balanced=true", "--out", s(&out)]);
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn train_sample_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out", s(&run), "--set", "model.variant=proposed", "--set", "schedule.balanced=true"];
    args.extend(TINY);
    ok(&args);
    assert!(run.join("final.ckpt").exists());
    assert!(run.join("config.toml").exists());

    let samples = dir.path().join("gen.csv");
    let out = ok(&["sample", "--checkpoint", s(&run.join("final.ckpt")), "--count", "20", "--seed", "3", "--out", s(&samples)]);
    assert!(out.contains("divergences: 0"), "{out}");
    let again = dir.path().join("gen2.csv");
    ok(&["sample", "--checkpoint", s(&run.join("final.ckpt")), "--count", "20", "--seed", "3", "--out", s(&again)]);
    assert_eq!(std::fs::read(&samples).unwrap(), std::fs::read(&again).unwrap());

    let rec = ok(&["eval", s(&samples), s(&again)]);
    let v: serde_json::Value = serde_json::from_str(rec.trim()).unwrap();
    assert_eq!(v["w1"].as_f64(), Some(0.0));
    assert_eq!(v["mmd"].as_f64(), Some(0.0));

    let report = dir.path().join("report");
    let label = format!("gen={}", s(&samples));
    ok(&["report", s(&run.join("metrics.csv")), "--out", s(&report), "--samples", &label]);
    for f in ["summary.csv", "w1_n2.svg", "mmd_n2.svg", "brightness.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = xidiff(&["schedule", "--set", "model.variant=zero_snr", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(bad.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let corrupt = xidiff(&["sample", "--checkpoint", s(&junk), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(corrupt.status.code(), Some(4));

    let a = dir.path().join("a");
    ok(&["gen-data", "--set", "dataset.size=10", "--out", s(&a)]);
    ok(&["gen-data", "--set", "dataset.size=10", "--set", "dataset.dim=3", "--out", s(&dir.path().join("b"))]);
    let mismatch = xidiff(&["eval", s(&a.join("train_seed0.csv")), s(&dir.path().join("b/train_seed0.csv"))]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let text = ok(&["verify", "--out", s(&out)]);
    assert!(!text.contains("FAIL"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(v.as_array().unwrap().len() > 20);
}

use std::path::Path;
use std::process::{Command, Output};

fn emofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emofuse"))
        .args(args)
        .env("EMOFUSE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn synth(dir: &Path, n: &str) -> (String, String) {
    let out = dir.join("data");
    let o = emofuse(&["synth", "--n-per-class", n, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    (
        out.join("manifest.jsonl").to_str().unwrap().to_owned(),
        out.join("embeddings.txt").to_str().unwrap().to_owned(),
    )
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let o = emofuse(&["--help"]);
    assert!(o.status.success());
    let top = text(&o.stdout);
    for sub in ["extract", "synth", "train", "eval", "cv", "gradcheck"] {
        assert!(top.contains(sub), "missing {sub}");
    }
    let train = text(&emofuse(&["train", "--help"]).stdout);
    for flag in [
        "--config", "--seed", "--learning-rate", "--epochs", "--batch-size", "--fusion-mode",
        "--loss-reduction", "--precision", "--pooling", "--clip-norm", "--dropout",
        "--weight-decay", "--folds",
    ] {
        assert!(train.contains(flag), "train --help lacks {flag}");
    }
    assert!(text(&emofuse(&["cv", "--help"]).stdout).contains("--modes"));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let o = emofuse(&["train", "--manifest", missing.to_str().unwrap(), "--embeddings", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("error:"));

    assert_eq!(emofuse(&["train", "--no-such-flag"]).status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epochs = \"many\"\n").unwrap();
    let o = emofuse(&[
        "train", "--config", bad.to_str().unwrap(), "--manifest", "m", "--embeddings", "e", "--out", "o",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = emofuse(&["train", "--epochs", "0", "--manifest", "m", "--embeddings", "e", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("epochs"));

    let o = emofuse(&["train", "--fusion-mode", "early", "--manifest", "m", "--embeddings", "e", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_each_op() {
    let o = emofuse(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}", text(&o.stdout));
    let out = text(&o.stdout);
    for op in ["matmul.lhs", "conv1d", "lstm.bwd.w_hh", "align_pool", "maxpool_time", "model."] {
        assert!(out.contains(op), "no line for {op}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, emb) = synth(dir.path(), "2");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 2\nfusion_mode = \"tempalign\"\nbatch_size = 4\n").unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let o = emofuse(&[
        "train", "--manifest", &manifest, "--embeddings", &emb, "--config", cfg.to_str().unwrap(),
        "--epochs", "3", "--seed", "9", "--out", ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let err = text(&o.stderr);
    assert!(err.contains("seed 9"), "{err}");
    assert!(err.contains("epochs = 3"), "flag must override file: {err}");
    assert!(err.contains("fusion_mode = \"tempalign\""), "{err}");
    assert!(ckpt.exists());

    let report = dir.path().join("eval.json");
    let o = emofuse(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", &manifest, "--embeddings", &emb,
        "--out", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("WA") && stdout.contains("UA"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["n"], 8);
}

#[test]
fn cv_table_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, emb) = synth(dir.path(), "2");
    let run = |out: &str| {
        let o = emofuse(&[
            "cv", "--manifest", &manifest, "--embeddings", &emb, "--epochs", "1", "--folds", "2",
            "--modes", "uttconcat,tempalign,tempalign-cme", "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        text(&o.stdout)
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 4, "{a}");
    assert!(lines[0].starts_with("Model"));
    for (line, mode) in lines[1..].iter().zip(["uttconcat", "tempalign", "tempalign-cme"]) {
        assert!(line.starts_with(mode));
    }
    for f in ["cv_uttconcat.json", "summary.txt"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn extract_writes_feature_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, emb) = synth(dir.path(), "1");
    let feats = dir.path().join("feats");
    let o = emofuse(&["extract", "--manifest", &manifest, "--out", feats.to_str().unwrap(), "--dtype", "f32"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(feats.join("syn00000.emt").exists());
    let m = std::fs::read_to_string(feats.join("manifest.jsonl")).unwrap();
    assert_eq!(m.lines().count(), 4);
    let ckpt = dir.path().join("m.ckpt");
    let fm = feats.join("manifest.jsonl");
    let o = emofuse(&[
        "train", "--manifest", fm.to_str().unwrap(), "--embeddings", &emb, "--epochs", "1",
        "--out", ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
}

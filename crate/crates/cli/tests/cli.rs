use std::path::Path;
use std::process::{Command, Output};

fn kfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfseg")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count(dir: &Path, prefix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
        .count()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let runs = tmp.path().join("runs");
    let o = kfseg(&["synth", "--out", p(&data), "--videos", "5", "--frames", "6-8", "--size", "32", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.json").exists());
    assert!(data.join("synthgen.json").exists());

    let exp = tmp.path().join("experiment.json");
    let cfg = serde_json::json!({
        "data": data,
        "out": runs,
        "folds": [0],
        "grid": [{"encoder": "vanilla", "block": "kf"}],
        "base_channels": 2,
        "input_size": 32,
        "train": {"epochs": 1, "steps_per_epoch": 2, "seq_len": [2, 3], "seed": 1}
    });
    std::fs::write(&exp, cfg.to_string()).unwrap();
    let o = kfseg(&["train", "--config", p(&exp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fold = runs.join("vanilla-kf").join("fold0");
    let ckpt = fold.join("model.ckpt");
    assert!(ckpt.exists() && fold.join("metrics.json").exists() && runs.join("summary.md").exists());

    let metrics = tmp.path().join("m.json");
    let o = kfseg(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--fold", "0", "--out", p(&metrics)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(&metrics).unwrap(),
        std::fs::read_to_string(fold.join("metrics.json")).unwrap()
    );

    let video = data.join("v000");
    let preds = tmp.path().join("preds");
    let o = kfseg(&["infer", "--checkpoint", p(&ckpt), "--video", p(&video), "--out", p(&preds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frames = count(&video, "frame_");
    assert_eq!(count(&preds, "pred_"), frames);

    let ov = tmp.path().join("overlay");
    let o = kfseg(&["overlay", "--video", p(&video), "--pred", p(&preds), "--gt", p(&video), "--out", p(&ov)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count(&ov, "frame_"), frames);

    let table = tmp.path().join("table.md");
    let o = kfseg(&["report", "--runs", p(&runs), "--out", p(&table)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&table).unwrap().contains("V+Ours"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    // usage errors
    assert_eq!(kfseg(&["synth"]).status.code(), Some(2));
    assert_eq!(kfseg(&["synth", "--out", p(&missing), "--frames", "9-3"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"probe_motion": {"step_px": 5}}"#).unwrap();
    assert_eq!(kfseg(&["synth", "--config", p(&bad), "--out", p(&missing)]).status.code(), Some(2));
    // I/O errors
    assert_eq!(kfseg(&["report", "--runs", p(&missing)]).status.code(), Some(3));
    assert_eq!(kfseg(&["report", "--runs", p(tmp.path())]).status.code(), Some(3));
    let exp = tmp.path().join("exp.json");
    std::fs::write(&exp, serde_json::json!({ "data": missing }).to_string()).unwrap();
    assert_eq!(kfseg(&["train", "--config", p(&exp)]).status.code(), Some(3));
}

#[test]
fn help_documents_exit_codes() {
    let o = kfseg(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success());
    assert!(text.contains("Exit codes") && text.contains("KFSEG_NUM_WORKERS"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn graphseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, json: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    p
}

/// Relative path and bytes of every file under `root`, sorted.
fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn smoke_synth(dir: &Path) -> PathBuf {
    write(
        dir,
        "synth.json",
        serde_json::json!({"grid": {"per_cell": 2, "resolution": 32, "seed": 5}}),
    )
}

fn smoke_train(dir: &Path, steps: usize) -> PathBuf {
    let stages: Vec<_> = (0..2)
        .map(|l| serde_json::json!({"level": l, "steps": steps, "batch_size": 2, "validation_samples": 4}))
        .collect();
    write(
        dir,
        "train.json",
        serde_json::json!({
            "model": {"levels": 2, "channels": 4, "resblocks": 1, "sigma_step": 2.0, "resolution": 32},
            "data": {"resolution": 32, "categories": ["sticker", "line"], "size_weights": [0.0, 0.5, 0.5]},
            "stages": stages,
            "seed": 3
        }),
    )
}

#[test]
fn synth_writes_every_cell_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_synth(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = graphseg(&["synth", "--config", path(&cfg), "--out", path(out), "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = tree(&a);
    let pngs = files.iter().filter(|(n, _)| n.ends_with(".png")).count();
    assert_eq!(pngs, 2 * 24);
    assert!(files.iter().any(|(n, _)| n == "manifest.json"));
    assert!(files.iter().any(|(n, _)| n == "run.json"));
    assert_eq!(files, tree(&b));
}

#[test]
fn invalid_configs_exit_with_usage_code_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        serde_json::json!({"grid": {"per_cell": 1, "resolution": 32, "area_range": [0.3, 0.1]}}),
    );
    let o = graphseg(&["synth", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("area_range"));

    let cfg = write(
        tmp.path(),
        "typo.json",
        serde_json::json!({"grid": {"per_cell": 1, "resolution": 32, "sead": 1}}),
    );
    let o = graphseg(&["synth", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sead"));

    assert_eq!(graphseg(&["synth"]).status.code(), Some(1));
    assert_eq!(graphseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "train.json",
        serde_json::json!({
            "model": {"levels": 1, "channels": 2, "resblocks": 1, "resolution": 16},
            "data": {"resolution": 16, "base_dir": path(&tmp.path().join("nowhere"))}
        }),
    );
    let o = graphseg(&["train", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = graphseg(&["train", "--config", path(&tmp.path().join("absent.json")), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_infer_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = graphseg(&["synth", "--config", path(&smoke_synth(tmp.path())), "--out", path(&data)]);
    assert!(o.status.success());

    let cfg = smoke_train(tmp.path(), 20);
    let run = tmp.path().join("run");
    let t = Instant::now();
    let o = graphseg(&["train", "--config", path(&cfg), "--out", path(&run), "--deterministic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.elapsed().as_secs() < 60);
    for f in ["config.json", "run.json", "stage0.json", "stage1.json", "model.json", "model.ckpt", "loss_curve.csv", "calibration.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let again = tmp.path().join("again");
    let o = graphseg(&["train", "--config", path(&cfg), "--out", path(&again), "--deterministic"]);
    assert!(o.status.success());
    assert_eq!(tree(&run), tree(&again));

    let resumed = tmp.path().join("resumed");
    let o = graphseg(&[
        "train", "--config", path(&cfg), "--out", path(&resumed), "--deterministic",
        "--resume", path(&run.join("stage0.json")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), fs::read(resumed.join("model.ckpt")).unwrap());

    let report = tmp.path().join("report");
    let model = run.join("model.json");
    let o = graphseg(&["eval", "--checkpoint", path(&model), "--data", path(&data), "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["cells"].as_array().unwrap().len(), 12);
    assert_eq!(r["overall"]["images"], 24);
    let csv = fs::read_to_string(report.join("pr_curves.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "category,size,threshold,precision,recall,f0.3,f2");
    assert_eq!(csv.lines().count(), 1 + 13 * 101);

    let masks = tmp.path().join("masks");
    let image = data.join("sticker/large/0.png");
    let o = graphseg(&["infer", "--checkpoint", path(&model), "--image", path(&image), "--out", path(&masks)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(masks.join("soft.png").exists() && masks.join("mask.png").exists());

    let text = fs::read_to_string(&model).unwrap().replace("\"channels\": 4", "\"channels\": 6");
    let tampered = run.join("tampered.json");
    fs::write(&tampered, text).unwrap();
    let o = graphseg(&["infer", "--checkpoint", path(&tampered), "--image", path(&image), "--out", path(&masks)]);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_passes_on_fresh_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g.json");
    let o = graphseg(&["gradcheck", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r["passed"] == true));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn overture(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overture"))
        .args(args)
        .env("OVERTURE_RUN_ROOT", root)
        .env_remove("OVERTURE_THREADS")
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let o = overture(root, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn error_line(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    serde_json::from_str(err.trim_end()).unwrap()
}

#[test]
fn stats_table9_from_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = fixture("table9_rows.jsonl");
    let out = ok(tmp.path(), &["stats", "--results", rows.to_str().unwrap(), "--table", "9"]);
    assert!(out.contains("122.0 (8)"), "{out}");
    assert!(out.contains("119.7 ± 2.3"), "{out}");
    assert!(out.contains("113.0 ± 2.6"), "{out}");
    assert!(out.contains("-5.5%"), "{out}");
    let p: f64 = out.split("p = ").nth(1).unwrap()[..5].parse().unwrap();
    assert!((0.015..=0.022).contains(&p), "{out}");

    let csv = ok(tmp.path(), &["stats", "--results", rows.to_str().unwrap(), "--table", "9", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().last().unwrap().starts_with("Mean ± std,119.7 ± 2.3,113.0 ± 2.6,"));
}

#[test]
fn stats_table8_from_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = fixture("table8_rows.jsonl");
    let csv = ok(tmp.path(), &["stats", "--results", rows.to_str().unwrap(), "--table", "8", "--format", "csv"]);
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    let last: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[6].trim_end_matches('%').parse().unwrap())
        .collect();
    for (got, want) in last.iter().zip([-3.1, 3.3, 6.1]) {
        assert!((got - want).abs() <= 0.1 + 1e-9, "{got} vs {want}");
    }
}

#[test]
fn errors_are_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let e = error_line(&overture(tmp.path(), &["stats", "--results", "/nonexistent", "--table", "9"]));
    assert_eq!(e["error"], "missing_artifact");
    let e = error_line(&overture(tmp.path(), &["gen-synth", "--chunks", "3", "--bogus"]));
    assert_eq!(e["error"], "usage");
    let e = error_line(&overture(tmp.path(), &["stats", "--results", "x", "--table", "4"]));
    assert_eq!(e["error"], "usage");
    let e = error_line(&overture(tmp.path(), &["train", "--data", "x.chunks", "--out", "o", "--stop", "sometimes"]));
    assert_eq!(e["error"], "usage");
    let e = error_line(&overture(tmp.path(), &["manifest", "--kind", "7", "--out", "m"]));
    assert_eq!(e["error"], "config");
    assert!(overture(tmp.path(), &["--help"]).status.success());
}

#[test]
fn micro_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    fs::create_dir_all(&data).unwrap();
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let out = ok(t, &["gen-synth", "--seed", "42", "--chunks", "12", "--out", &p(&data.join("synth-tiny.chunks"))]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["chunks"], 12);

    let text: String = (0..4000).map(|i| ["the ", "cat ", "sat ", "on ", "a ", "mat. "][(i * 7 + i / 5) % 6]).collect();
    let src = t.join("src.txt");
    fs::write(&src, &text).unwrap();
    let codec = data.join("words.json");
    for key in ["poetry", "prose"] {
        ok(t, &[
            "ingest-text", "--source", &p(&src), "--codec", "word", "--vocab", "32",
            "--word-codec", &p(&codec), "--out", &p(&data.join(format!("{key}.chunks"))),
        ]);
    }

    let manifest = format!(
        "{}\n{}\n",
        serde_json::json!({"name": "micro", "train": {"peak_lr": 1e-3, "final_lr": 1e-4, "warmup_steps": 2,
            "weight_decay": 0.1, "clip_norm": 1.0, "accum": 1, "micro_batch": 2, "seed": 42, "exec": "parallel"},
            "val_fraction": 0.25}),
        serde_json::json!({"name": "pipe", "label": "pipeline", "d_model": 16, "seeds": [1, 2], "phases": [
            {"name": "music", "data": "synth-tiny", "stop": {"rule": "early_stop", "patience": 1, "max_epochs": 2}, "shared_seed": 42},
            {"name": "poetry", "data": "poetry", "stop": {"rule": "fixed_epochs", "epochs": 1}},
            {"name": "prose", "data": "prose", "stop": {"rule": "fixed_epochs", "epochs": 2}}]}),
    );
    let mpath = t.join("micro.jsonl");
    fs::write(&mpath, manifest).unwrap();
    let root = t.join("runs");
    let args = ["pipeline", "--manifest", &p(&mpath), "--condition", "pipe", "--data", &p(&data)];
    let first = ok(&root, &args);
    assert_eq!(first.lines().count(), 2);

    // completed runs are loaded, not retrained
    let ck = root.join("runs/pipe/seed1/2-prose/ckpt/final.ckpt");
    let stamp = fs::metadata(&ck).unwrap().modified().unwrap();
    assert_eq!(ok(&root, &args), first);
    assert_eq!(fs::metadata(&ck).unwrap().modified().unwrap(), stamp);

    // same outputs from a fresh root in sequential mode
    let other = t.join("runs2");
    let mut seq = args.to_vec();
    seq.push("--sequential");
    assert_eq!(ok(&other, &seq), first);

    let rows = t.join("rows.jsonl");
    ok(t, &["export-metrics", "--run-dir", &p(&root), "--out", &p(&rows)]);
    assert_eq!(fs::read_to_string(&rows).unwrap().lines().count(), 2 * 3);
    ok(t, &["export-metrics", "--run-dir", &p(&root.join("runs/pipe/seed2")), "--out", &p(&t.join("one.csv")), "--format", "csv"]);
    let one = fs::read_to_string(t.join("one.csv")).unwrap();
    assert!(one.starts_with("condition,seed,d_model,phase,epoch,val_loss,val_ppl,micro_batches\n"));
    assert_eq!(one.lines().count(), 4);

    // probes on the shared music checkpoint
    let music = fs::read_dir(root.join("shared")).unwrap().next().unwrap().unwrap().path();
    let mck = p(&music.join("ckpt/best.ckpt"));
    let g = ok(t, &["probe", "--ckpt", &mck, "--kind", "grammar", "--data", &p(&data.join("synth-tiny.chunks"))]);
    let g: serde_json::Value = serde_json::from_str(g.trim()).unwrap();
    assert!(g["bar_to_pos"].as_f64().unwrap() > 0.0);
    let m = ok(t, &["probe", "--ckpt", &mck, "--kind", "motif"]);
    assert!(m.contains("p_bar"));
    let a = ok(t, &["probe", "--ckpt", &mck, "--kind", "attention", "--data", &p(&data.join("synth-tiny.chunks"))]);
    assert!(a.contains("fraction"));
    let e = error_line(&overture(t, &["probe", "--ckpt", &p(&ck), "--kind", "motif"]));
    assert_eq!(e["error"], "vocab_mismatch");

    // standalone train + transfer
    let wk = t.join("xfer.ckpt");
    ok(t, &["transfer", "--src", &mck, "--dst-vocab", "wordlevel", "--vocab-size", "32", "--out", &p(&wk)]);
    let tdir = t.join("train-out");
    let targs = [
        "train", "--data", &p(&data.join("prose.chunks")), "--init", &p(&wk), "--stop", "fixed:1",
        "--phase", "prose", "--out", &p(&tdir),
    ];
    let once = ok(t, &targs);
    for f in ["config.snapshot.json", "metrics.jsonl", "ckpt/best.ckpt", "ckpt/final.ckpt", "summary.json", "DONE"] {
        assert!(tdir.join(f).exists(), "{f}");
    }
    assert_eq!(ok(t, &targs), once);
}

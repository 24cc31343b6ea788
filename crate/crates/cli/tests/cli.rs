use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A model and schedule small enough to train in well under a second.
const SMALL: &[&str] = &[
    "--set",
    "model.d=8",
    "--set",
    "model.d_time=4",
    "--set",
    "model.L=4",
    "--set",
    "model.heads=2",
    "--set",
    "model.enc_layers=1",
    "--set",
    "embedding.dim=16",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=16",
];

fn prism(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prism"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("run prism")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn gen_data(dir: &Path) {
    let o = prism(&[
        "gen-data", "--out", path(dir), "--nodes", "20", "--events", "200", "--communities", "2", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn train_small(data: &Path, run: &Path) {
    let mut args = vec!["train", "--data", path(data), "--out", path(run)];
    args.extend_from_slice(SMALL);
    let o = prism(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&a);
    gen_data(&b);
    for f in ["events.csv", "node_texts.csv", "edge_texts.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["num_events"], 200);
    assert_eq!(manifest["num_nodes"], 20);
    let rows = fs::read_to_string(a.join("events.csv")).unwrap().lines().count();
    assert_eq!(rows, 201);
}

#[test]
fn invalid_generator_settings_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = prism(&["gen-data", "--out", path(tmp.path()), "--nodes", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("num_nodes"));
}

#[test]
fn missing_data_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = prism(&["train", "--data", path(&tmp.path().join("nope")), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    gen_data(&data);
    train_small(&data, &run);
    for f in ["config.json", "report.json", "train_log.csv", "best.ckpt", "last.ckpt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let report = read_json(&run.join("report.json"));
    assert_eq!(report["train"]["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["splits"]["train"], 140);
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,task,recon,margin,step_reg,total\n"));

    let ckpt = run.join("best.ckpt");
    let o = prism(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("link test transductive: AP "));
    let link = read_json(&run.join("eval_link_test_transductive.json"));
    assert!(link["ap"].is_f64() && link["auc"].is_f64());
    assert!(link.get("hits").is_none());
    assert_eq!(link["config_echo"]["model"]["d"], 8);
    assert!(run.join("eval_link_test_transductive.csv").is_file());

    let out = tmp.path().join("retrieval");
    let o = prism(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data),
        "--task",
        "retrieval",
        "--set",
        "eval.C=5",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ret = read_json(&out.join("eval_retrieval_test_transductive.json"));
    for k in ["1", "3", "10"] {
        let h = ret["hits"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&h));
    }
    assert!(ret["ap"].is_null());

    // The default pool is larger than this 20-node universe.
    let o = prism(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--task", "retrieval"]);
    assert_eq!(o.status.code(), Some(2));

    let o = prism(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--setting", "sideways"]);
    assert_eq!(o.status.code(), Some(2));

    let o = prism(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data),
        "--set",
        "embedding.dim=32",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    // A config with a required key removed names that key.
    let mut cfg = read_json(&run.join("config.json"));
    cfg["model"].as_object_mut().unwrap().remove("K");
    let broken = tmp.path().join("broken.json");
    fs::write(&broken, cfg.to_string()).unwrap();
    let o = prism(&["train", "--config", path(&broken), "--data", path(&data), "--out", path(&run)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.K"), "{}", stderr(&o));

    let o = prism(&["train", "--data", path(&data), "--out", path(&run), "--set", "train.momentum=0.9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.momentum"), "{}", stderr(&o));
}

#[test]
fn ablation_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data);

    let out = tmp.path().join("full");
    let mut args = vec!["ablate", "--data", path(&data), "--out", path(&out), "--variants", "full", "--seeds", "0"];
    args.extend_from_slice(SMALL);
    let o = prism(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("full,ap_transductive,") && rows[0].ends_with(",0"), "{}", rows[0]);
    assert!(out.join("ablation.md").is_file() && out.join("ablation.json").is_file());

    let out = tmp.path().join("steps");
    let mut args = vec![
        "ablate",
        "--data",
        path(&data),
        "--out",
        path(&out),
        "--variants",
        "steps=1,steps=2,steps=3",
        "--seeds",
        "0",
        "--metrics",
        "ap_transductive,val_ap",
    ];
    args.extend_from_slice(SMALL);
    let o = prism(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["steps=1", "steps=1", "steps=2", "steps=2", "steps=3", "steps=3"]);

    let o = prism(&["ablate", "--data", path(&data), "--out", path(&out), "--variants", "wo_everything"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grad_check_passes_and_catches_sabotage() {
    for seed in ["0", "1"] {
        let mut args = vec!["grad-check", "--seed", seed, "--max-entries", "4"];
        args.extend_from_slice(SMALL);
        let o = prism(&args);
        assert!(o.status.success(), "seed {seed}: {}{}", stdout(&o), stderr(&o));
        assert!(!stdout(&o).contains("FAIL"));
    }

    let mut args = vec!["grad-check", "--max-entries", "2", "--sabotage", "decoder.out.b"];
    args.extend_from_slice(SMALL);
    let o = prism(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL decoder.out.b"));
    assert!(stderr(&o).contains("decoder.out.b"));
}

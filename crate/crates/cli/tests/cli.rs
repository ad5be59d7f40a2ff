use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn armsight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_armsight"))
        .args(args)
        .env_remove("ARMSIGHT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = armsight(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = armsight(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: stdout {} stderr {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(out: &Path, types: &str, n: usize, seed: u64) -> String {
    ok(&[
        "gen-data",
        "--out",
        s(out),
        "--types",
        types,
        "--n-per-type",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
    ])
}

/// A config with training runs short enough for tests.
fn quick_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "pretrain": { "total_iters": 3, "optimizer": { "kind": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8 } },
        "transfer": { "total_iters": 6, "stage1_max_iters": 3, "stage2_extra_iters": 3, "plateau_window": 100 },
        "sizes": { "sizes": [4, 8], "epochs": null, "train": { "total_iters": 4, "stage1_max_iters": 2, "stage2_extra_iters": 2, "plateau_window": 100 } },
        "eval": { "bench_frames": 10 }
    });
    let p = dir.join("quick.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn help_lists_commands_and_exit_codes() {
    let help = ok(&["--help"]);
    for cmd in ["gen-data", "pretrain", "transfer", "eval", "bench", "export-curves", "reference"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
    for line in ["2  invalid configuration", "4  transfer dataset lacks", "5  corrupt", "6  training diverged"] {
        assert!(help.contains(line), "`{line}` missing from help");
    }
    assert!(help.contains("ARMSIGHT_THREADS"));
    let sub = ok(&["transfer", "--help"]);
    assert!(sub.contains("Exit codes"));
}

#[test]
fn gen_data_counts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("base");
    let table = gen(&out, "ur3,ur5,ur10", 500, 7);
    let manifest = json(&out.join("dataset.json"));
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 1500);
    assert_eq!(manifest["classes"], serde_json::json!(["ur3", "ur5", "ur10"]));
    for name in ["ur3", "ur5", "ur10"] {
        let row = table.lines().find(|l| l.starts_with(name)).unwrap();
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols[1..], ["400", "100", "500"]);
    }
    assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["all", "1200", "300", "1500"]));

    // every file except the manifest itself is listed with its digest
    let listed = fs::read_to_string(out.join("MANIFEST")).unwrap();
    let all = files(&out);
    assert_eq!(listed.lines().count(), all.len() - 1);
    for line in listed.lines() {
        let (digest, rel) = line.split_once("  ").unwrap();
        assert_eq!(digest, hex::encode(Sha256::digest(&all[Path::new(rel)])), "{rel}");
    }
    let cfg = json(&out.join("run_config.json"));
    assert_eq!(cfg["generator"]["n_per_type"], 500);
    assert_eq!(cfg["seed"], 7);
}

#[test]
fn gen_data_is_reproducible_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "panda", 6, 3);
    gen(&b, "panda", 6, 3);
    assert_eq!(files(&a), files(&b));
    let c = tmp.path().join("c0");
    gen(&c, "panda", 6, 4);
    assert_ne!(fs::read(a.join("MANIFEST")).unwrap(), fs::read(c.join("MANIFEST")).unwrap());

    let err = fails(&["gen-data", "--out", s(&tmp.path().join("c")), "--types", "ur5,atlas"], 2);
    assert!(err.contains("atlas") && err.contains("kuka_iiwa") && err.contains("panda"), "{err}");
    let err = fails(&["gen-data", "--out", s(&a), "--types", "panda", "--n-per-type", "6"], 3);
    assert!(err.contains("not empty"), "{err}");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "colour": "red"}"#).unwrap();
    let err = fails(&["gen-data", "--config", s(&bad), "--out", s(&tmp.path().join("d"))], 2);
    assert!(err.contains("colour"), "{err}");
    let out = Command::new(env!("CARGO_BIN_EXE_armsight"))
        .args(["gen-data", "--out", s(&tmp.path().join("e"))])
        .env("ARMSIGHT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_stub_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "ur5,kuka_iiwa,panda", 5, 21);
    let run = tmp.path().join("eval");
    ok(&["eval", "--oracle-stub", "--data", s(&data), "--out", s(&run)]);
    let report = json(&run.join("eval_report.json"));
    let overall = &report["overall"];
    assert_eq!(overall["mask_accuracy"], 1.0);
    assert_eq!(overall["type_accuracy"], 1.0);
    assert_eq!(overall["joint_error_median"], 0.0);
    assert_eq!(overall["base_error_median"], 0.0);
    assert_eq!(report["samples"], 3);
    let header = fs::read_to_string(run.join("error_vs_distance.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "bin_low,bin_high,type,median_err_cm,n");
}

#[test]
fn pipeline_commands_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let base = tmp.path().join("base");
    let mixed = tmp.path().join("mixed");
    let other = tmp.path().join("other");
    gen(&base, "ur3,ur5", 5, 1);
    gen(&mixed, "ur3,kuka_iiwa", 5, 2);
    gen(&other, "kuka_iiwa,panda", 5, 3);
    let before = [files(&base), files(&mixed)];

    let pre = tmp.path().join("pre");
    ok(&["pretrain", "--config", s(&cfg), "--data", s(&base), "--out", s(&pre)]);
    let ckpt = pre.join("checkpoint.amnt");
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"AMNT");
    let log = fs::read_to_string(pre.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["iter", "stage", "mask", "jcoords", "bcoords", "type", "final", "lr"] {
        assert!(first.get(key).is_some(), "log lacks {key}");
    }

    // the copied config alone reproduces the run
    let again = tmp.path().join("pre_again");
    ok(&["pretrain", "--config", s(&pre.join("run_config.json")), "--out", s(&again)]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("checkpoint.amnt")).unwrap());

    let err = fails(&["pretrain", "--config", s(&cfg), "--data", s(&mixed), "--out", s(&tmp.path().join("x"))], 8);
    assert!(err.contains("single robot family"), "{err}");

    let err = fails(
        &["transfer", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--data", s(&other), "--out", s(&tmp.path().join("y"))],
        4,
    );
    assert!(err.contains("base family `ur`"), "{err}");

    let tr = tmp.path().join("transfer");
    ok(&["transfer", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--data", s(&mixed), "--out", s(&tr)]);
    let report = json(&tr.join("train_report.json"));
    assert_eq!(report["stage_switch_iter"], 3);

    let ev = tmp.path().join("eval");
    let table = ok(&["eval", "--checkpoint", s(&tr.join("checkpoint.amnt")), "--data", s(&mixed), "--out", s(&ev)]);
    assert!(table.contains("kuka_iiwa") && table.contains("families"));

    let curves = tmp.path().join("curves");
    ok(&[
        "export-curves", "--config", s(&cfg), "--run", s(&ev), "--checkpoint", s(&ckpt), "--data", s(&mixed), "--out", s(&curves),
    ]);
    let sizes = fs::read_to_string(curves.join("loss_vs_size.csv")).unwrap();
    let lines: Vec<&str> = sizes.lines().collect();
    assert_eq!(lines[0], "size,val_loss,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,") && lines[2].starts_with("8,"));
    let dist = fs::read_to_string(curves.join("error_vs_distance.csv")).unwrap();
    assert_eq!(dist.lines().next().unwrap(), "bin_low,bin_high,type,median_err_cm,n");
    // two families in six bins of 0.25 m over 1.2 to 2.5 m
    assert_eq!(dist.lines().count(), 1 + 2 * 6);

    let err = fails(&["export-curves", "--run", s(&ev), "--out", s(&tmp.path().join("z"))], 2);
    assert!(err.contains("loss_vs_size.csv"), "{err}");

    let bench = tmp.path().join("bench");
    ok(&["bench", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--data", s(&base), "--out", s(&bench)]);
    let timing = json(&bench.join("timing.json"));
    assert_eq!(timing["n_frames"], 10);
    assert_eq!(timing["input"], serde_json::json!([128, 106]));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    let bad = tmp.path().join("bad.amnt");
    fs::write(&bad, bytes).unwrap();
    fails(&["eval", "--checkpoint", s(&bad), "--data", s(&mixed), "--out", s(&tmp.path().join("w"))], 5);
    fails(&["eval", "--checkpoint", s(&tmp.path().join("missing.amnt")), "--data", s(&mixed), "--out", s(&tmp.path().join("v"))], 3);

    assert_eq!([files(&base), files(&mixed)], before, "an input dataset changed");
}

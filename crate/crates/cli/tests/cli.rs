use std::path::Path;
use std::process::{Command, Output};

fn topodebate(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_topodebate")).args(args).output().expect("spawn topodebate");
    assert!(
        out.status.success(),
        "topodebate {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_compare_recompute_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    topodebate(&["train", "--updates", "2", "--out", arg(out)]);
    let ckpt = out.join("checkpoint_final.json");
    assert!(ckpt.exists());
    assert!(out.join("config.toml").exists());

    topodebate(&["eval", "--topology", "full", "--out", arg(out)]);
    let full = out.join("eval_full/metrics.json");
    let stdout = topodebate(&[
        "eval",
        "--checkpoint",
        arg(&ckpt),
        "--reference",
        arg(&full),
        "--out",
        arg(out),
    ])
    .stdout;
    assert!(!stdout.is_empty());
    let rumad = out.join("eval_rumad/metrics.json");

    let cmp = topodebate(&["compare", arg(&full), arg(&rumad), "--json"]).stdout;
    let rows: serde_json::Value = serde_json::from_slice(&cmp).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    let out = topodebate(&[
        "recompute",
        arg(&out.join("eval_rumad/transcripts.jsonl")),
        "--metrics",
        arg(&rumad),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("reproduced exactly"));
}

#[test]
fn debate_prints_one_transcript_from_a_dataset() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/sample_tasks.jsonl");
    let out = topodebate(&["debate", "--dataset", data, "--topology", "ring", "--task", "phys-1", "--json"]).stdout;
    let t: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(t["task_id"], "phys-1");
    assert!(!t["rounds"].as_array().unwrap().is_empty());
}

#[test]
fn rejects_unknown_ablation_and_task() {
    for args in [
        &["eval", "--ablate", "no_such_thing"][..],
        &["debate", "--task", "missing-task"][..],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_topodebate")).args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
    }
}

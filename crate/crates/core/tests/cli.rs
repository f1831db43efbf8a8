use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn climat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climat"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn every_subcommand_runs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("gen.json"), r#"{"subjects": 60, "image_size": 32, "patch_size": 8}"#).unwrap();
    fs::write(
        d.join("train.json"),
        r#"{"dataset": "data", "out": "ignored",
            "model": {"depth_radiologist": 1, "depth_context": 1, "depth_practitioner": 1,
                      "width_image": 16, "width_clinical": 8, "heads": 2, "image_size": 32, "patch_size": 8},
            "optimizer": {"lr": 0.003, "epochs": 1}}"#,
    )
    .unwrap();
    ok(&climat(d, &["gen", "--config", "gen.json", "--seed", "2", "--out", "data"]));
    assert!(d.join("data/manifest.json").exists());

    let log = ok(&climat(d, &["train", "--config", "train.json", "--seed", "4", "--out", "run"]));
    assert!(log.contains("epoch   1"));
    let echo = fs::read_to_string(d.join("run/run_config.json")).unwrap();
    assert!(echo.contains("\"seed\": 4"));

    fs::write(d.join("eval.json"), r#"{"checkpoint": "run/checkpoint.clmt", "split": "all"}"#).unwrap();
    ok(&climat(d, &["eval", "--config", "eval.json", "--out", "report"]));
    assert!(d.join("report/eval_metrics.csv").exists());

    fs::write(d.join("attn.json"), r#"{"checkpoint": "run/checkpoint.clmt", "subject": "S00001", "horizon": 3}"#).unwrap();
    ok(&climat(d, &["attn", "--config", "attn.json", "--out", "maps"]));
    assert!(d.join("maps/attn_image_S00001_t3.pgm").exists());
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = climat(d, &["eval"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));

    fs::write(d.join("bad.json"), r#"{"optimizer": {"lr": -1.0}}"#).unwrap();
    let o = climat(d, &["train", "--config", "bad.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning rate"));

    let o = climat(d, &["train", "--config", "missing.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

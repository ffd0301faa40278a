use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seeds = 3
collect.steps = 500
model.hidden = 12,12
model.epochs = 2
model.holdout = 100
cvae.hidden = 12,12
cvae.epochs = 2
rollout.total = 200
rollout.batch_size = 100
learner.steps = 20
learner.hidden = 8,8
learner.batch_size = 16
eval.episodes = 2
";

fn cabi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabi"))
        .current_dir(dir)
        .env_remove("CABI_OUT")
        .args(["--config", "tiny.cfg", "--out", "run"])
        .args(args)
        .output()
        .expect("spawn cabi")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_prerequisite_names_stage_and_file() {
    let dir = setup();
    let o = cabi(dir.path(), &["train-models"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage train-models"), "{err}");
    assert!(err.contains("dataset.json"), "{err}");

    ok(&cabi(dir.path(), &["collect"]));
    let o = cabi(dir.path(), &["augment", "--strategy", "cabi"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage augment") && err.contains("forward_ensemble"), "{err}");
}

#[test]
fn staged_pipeline_is_reproducible_and_idempotent() {
    let dir = setup();
    let p = dir.path();
    ok(&cabi(p, &["collect", "--env", "riskworld", "--steps", "500", "--seed", "3"]));
    ok(&cabi(p, &["train-models", "--seed", "3"]));
    for s in ["forward", "backward", "cabi"] {
        ok(&cabi(p, &["augment", "--seed", "3", "--strategy", s, "--k", "20", "--count", "200"]));
    }
    let first = manifest(p);
    let buf = "seed-3/buffers/cabi-k20.bin";
    assert!(first["files"][buf]["sha256"].is_string());

    // second run of a finished stage is a no-op
    let o = cabi(p, &["augment", "--seed", "3", "--strategy", "cabi", "--k", "20", "--count", "200"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("up to date"));

    // forced rerun reproduces identical bytes
    ok(&cabi(p, &["--force", "collect", "--seed", "3", "--steps", "500"]));
    ok(&cabi(p, &["--force", "augment", "--seed", "3", "--strategy", "cabi", "--k", "20", "--count", "200"]));
    let second = manifest(p);
    for f in ["seed-3/dataset.bin", buf, "seed-3/models/forward_ensemble.params"] {
        assert_eq!(first["files"][f]["sha256"], second["files"][f]["sha256"], "{f}");
    }
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("run/seed-3/buffers/cabi-k20.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["strategy"], "cabi");
    assert_eq!(prov["count"], 200);
    assert!(prov["extra"]["seed-3/models/backward_cvae.params"].is_string());

    ok(&cabi(p, &["train-policy", "--seed", "3", "--strategy", "cabi", "--k", "20"]));
    let o = cabi(p, &["eval", "--seed", "3", "--strategy", "cabi", "--k", "20", "--episodes", "2"]);
    ok(&o);
    let eval_csv = fs::read_to_string(p.join("run/seed-3/eval/cabi-k20.csv")).unwrap();
    assert_eq!(eval_csv.lines().count(), 3);

    let o = cabi(p, &["report", "--seeds", "3", "--strategies", "forward,backward,cabi", "--k", "20"]);
    ok(&o);
    let report = p.join("run/report");
    let svgs = fs::read_dir(&report)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 4); // dataset plus three buffers
    let csv = fs::read_to_string(report.join("region_fractions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let m = manifest(p);
    assert!(m["files"]["report/region_fractions.csv"]["sha256"].is_string());
}

#[test]
fn out_directory_from_environment() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_cabi"))
        .current_dir(dir.path())
        .env("CABI_OUT", "elsewhere")
        .args(["--config", "tiny.cfg", "collect", "--steps", "50"])
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("elsewhere/seed-3/dataset.bin").exists());
}

#[test]
fn ablation_grid_counts_cells_and_survives_k0() {
    let dir = setup();
    let o = cabi(dir.path(), &["ablation", "--strategies", "cabi,bomi", "--ks", "0,100", "--seeds", "3"]);
    ok(&o);
    let csv = fs::read_to_string(dir.path().join("run/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows.iter().all(|r| r.ends_with(",ok")), "{csv}");
    let k0 = rows.iter().find(|r| r.starts_with("cabi,0,")).unwrap();
    assert_eq!(k0.split(',').nth(5), Some("0"));
}

#[test]
fn bad_config_line_is_reported() {
    let dir = setup();
    fs::write(dir.path().join("tiny.cfg"), "model.width = 3\n").unwrap();
    let o = cabi(dir.path(), &["collect"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tiny.cfg:1"));
}

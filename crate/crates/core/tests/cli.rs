use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roi_uplift::learners::LearnerConfig;
use roi_uplift::simulate::{PerSegment, PopulationConfig};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roi-uplift")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn worked_example_through_assign() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "cate_y,cate_loss\n3,-1\n2,2\n1,1\n4,5\n").unwrap();
    let out = cli(&["assign", "--scores", &s(&scores), "--solve", "--out", &s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("theta* = 1"), "{stdout}");
    assert!(stdout.contains("treated = [0, 2]"), "{stdout}");

    let csv = fs::read_to_string(dir.path().join("assignment.csv")).unwrap();
    let z: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(z, ["1", "0", "1", "0"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_cate_y"], 4.0);
    assert!(dir.path().join("run_manifest.jsonl").is_file());
}

#[test]
fn threshold_assignment_matches_rule() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "cate_y,cate_loss\n3,-1\n2,2\n1,1\n4,5\n-1,2\n").unwrap();
    let out = cli(&["assign", "--scores", &s(&scores), "--theta", "0.9", "--out", &s(dir.path())]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("treated = [0, 1, 2]"));
    let out = cli(&["assign", "--scores", &s(&scores), "--theta=-inf", "--out", &s(dir.path())]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("treated = [0, 1, 2, 3]"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(cli(&["gen", "--config", &s(&missing), "--out", &s(dir.path())]).status.code(), Some(2));
    assert_eq!(cli(&["gen"]).status.code(), Some(2));
    assert_eq!(cli(&["assign", "--out", &s(dir.path())]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cli(&["simulate", "--config", &s(&bad), "--out", &s(dir.path())]).status.code(), Some(3));

    let model = dir.path().join("model.json");
    fs::write(&model, r#"{"version": 99}"#).unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, "x").unwrap();
    assert_eq!(
        cli(&["evaluate", "--model", &s(&model), "--data", &s(&data), "--out", &s(dir.path())]).status.code(),
        Some(3)
    );
}

#[test]
fn train_without_purchases_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pop.json");
    let mut pop = PopulationConfig { n: 500, ..Default::default() };
    pop.base_rate.intercepts = PerSegment::splat(-1000.0);
    pop.uplift.effects = PerSegment::splat(0.0);
    fs::write(&cfg, serde_json::to_string(&pop).unwrap()).unwrap();
    let gen = cli(&["gen", "--config", &s(&cfg), "--out", &s(&dir.path().join("d"))]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let data = dir.path().join("d/data.csv");
    let out = cli(&["train", "--method", "retrospective", "--data", &s(&data), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_lists_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    let cfg = dir.path().join("pop.json");
    fs::write(&cfg, serde_json::to_string(&PopulationConfig { n: 4000, ..Default::default() }).unwrap()).unwrap();
    assert!(cli(&["gen", "--config", &s(&cfg), "--seed", "1", "--out", &p("train")]).status.success());
    assert!(cli(&["gen", "--config", &s(&cfg), "--seed", "2", "--out", &p("val")]).status.success());
    let train_cfg = dir.path().join("train.json");
    let learner = serde_json::json!({ "learner": LearnerConfig::logistic() });
    fs::write(&train_cfg, learner.to_string()).unwrap();
    let mut models = Vec::new();
    for m in ["two-models", "transformed-outcome", "fractional-approximation", "retrospective"] {
        let out = cli(&["train", "--method", m, "--data", &p("train/data.csv"), "--config", &s(&train_cfg), "--out", &p(m)]);
        assert!(out.status.success(), "{m}: {}", String::from_utf8_lossy(&out.stderr));
        models.push(format!("{}/model.json", p(m)));
    }
    let cmp = p("cmp");
    let mut args = vec!["compare", "--data", &p("val/data.csv")].into_iter().map(String::from).collect::<Vec<_>>();
    args.extend(["--out".to_string(), cmp.clone(), "--models".to_string()]);
    args.extend(models);
    let out = Command::new(env!("CARGO_BIN_EXE_roi-uplift")).args(&args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "{csv}");
    assert!(lines[0].starts_with("method,auuc"));
}

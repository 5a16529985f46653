use std::path::{Path, PathBuf};

use mombo::bounds::BoundRow;
use mombo::pevi::CurvePoint;
use mombo_cli::experiments::EstimatorRow;
use mombo_cli::metrics::{AggregateRow, UqPoint, UqSummary};
use mombo_cli::run;
use mombo_cli::table::read_csv;

const SMALL: &str = r#"{
  "dataset": {"size": 2000},
  "ensemble": {"max_epochs": 5, "hidden": [32, 32]},
  "sac": {"actor_hidden": [32, 32], "critic_hidden": [32, 32], "batch_size": 64},
  "train": {"steps": 300, "eval_every": 100, "eval_episodes": 2, "rollout_batch": 100, "rollout_every": 100},
  "eval_uq": {"episodes": 1, "exact_samples": 50},
  "seeds": [0, 1]
}"#;

fn mombo(args: &[&str]) -> i32 {
    run(std::iter::once("mombo").chain(args.iter().copied()))
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_svg(path: PathBuf) {
    let text = std::fs::read_to_string(&path).unwrap();
    roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
}

#[test]
fn small_pipeline_emits_reparseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("run");
    let base = ["--quiet", "--config", &cfg, "--out", s(&out)];
    let with = |cmd: &[&str]| mombo(&[&base[..], cmd].concat());

    assert_eq!(with(&["train"]), 0);
    let curves: Vec<Vec<CurvePoint>> = (0..2)
        .map(|k| read_csv(&out.join(format!("curve-mombo-seed{k}.csv"))).unwrap())
        .collect();
    for c in &curves {
        assert_eq!(c.iter().map(|p| p.step).collect::<Vec<_>>(), vec![100, 200, 300]);
    }
    let agg: Vec<AggregateRow> = read_csv(&out.join("curve-mombo-aggregate.csv")).unwrap();
    assert_eq!(agg.len(), 3);
    for (i, row) in agg.iter().enumerate() {
        let (a, b) = (curves[0][i].normalized_return, curves[1][i].normalized_return);
        let mean = (a + b) / 2.0;
        let std = (((a - mean).powi(2) + (b - mean).powi(2)) / 1.0).sqrt();
        assert_eq!(row.seeds, 2);
        assert!((row.normalized_mean - mean).abs() < 1e-9);
        assert!((row.normalized_std - std).abs() < 1e-9);
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics-mombo.json")).unwrap()).unwrap();
    let m0 = &metrics[0];
    let norms: Vec<f64> = curves[0].iter().map(|p| p.normalized_return).collect();
    assert!((m0["aulc"].as_f64().unwrap() - norms.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    let dumped: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(dumped["dataset"]["size"], 2000);
    assert_eq!(dumped["penalty"]["beta"], 2.0);

    std::fs::remove_file(out.join("curve-mombo-aggregate.csv")).unwrap();
    assert_eq!(with(&["aggregate"]), 0);
    let again: Vec<AggregateRow> = read_csv(&out.join("curve-mombo-aggregate.csv")).unwrap();
    assert_eq!(again, agg);

    assert_eq!(with(&["eval-uq"]), 0);
    let points: Vec<UqPoint> = read_csv(&out.join("eval-uq-seed0.csv")).unwrap();
    assert!(!points.is_empty());
    let summary: Vec<UqSummary> = read_csv(&out.join("eval-uq-summary.csv")).unwrap();
    assert_eq!(summary.len(), 6);
    assert!(summary.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));

    assert_eq!(with(&["fig-mm-vs-mc"]), 0);
    let rows: Vec<EstimatorRow> = read_csv(&out.join("fig-mm-vs-mc.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.method == "mc").count(), 4);
    assert_svg(out.join("fig-mm-vs-mc.svg"));
    assert_svg(out.join("fig-mm-vs-mc-variance.svg"));

    let bcfg = write_config(
        dir.path(),
        "bounds.json",
        &format!(r#"{{"bounds": {{"critic": "{}"}}}}"#, s(&out.join("policy-mombo-seed0.nets"))),
    );
    assert_eq!(mombo(&["--quiet", "--config", &bcfg, "--out", s(&out), "bounds"]), 0);
    let rows: Vec<BoundRow> = read_csv(&out.join("bounds.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.layer.is_none()).count(), 4);
}

#[test]
fn fixture_bounds_favor_moment_matching() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.json", r#"{"penalty": {"rmax": 11.7, "gamma": 0.99}}"#);
    let out = dir.path().join("b");
    assert_eq!(mombo(&["--quiet", "--config", &cfg, "--out", s(&out), "bounds"]), 0);
    let rows: Vec<BoundRow> = read_csv(&out.join("bounds.csv")).unwrap();
    let totals: Vec<&BoundRow> = rows.iter().filter(|r| r.layer.is_none()).collect();
    assert_eq!(totals.iter().map(|r| r.samples).collect::<Vec<_>>(), vec![10, 100, 1000, 10000]);
    for r in totals {
        assert!(r.mm_subopt.unwrap() < r.mc_subopt.unwrap(), "{r:?}");
    }
}

#[test]
fn fig_without_checkpoints_uses_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    assert_eq!(mombo(&["--quiet", "--out", s(&out), "fig-mm-vs-mc"]), 0);
    let rows: Vec<EstimatorRow> = read_csv(&out.join("fig-mm-vs-mc.csv")).unwrap();
    let mm: Vec<&EstimatorRow> = rows.iter().filter(|r| r.method == "mm").collect();
    assert_eq!(mm.len(), 1);
    assert_eq!(mm[0].var, 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(mombo(&["--help"]), 0);
    assert_eq!(mombo(&["--version"]), 0);
    assert_eq!(mombo(&[]), 1);
    assert_eq!(mombo(&["no-such-command"]), 1);
    assert_eq!(mombo(&["train", "--seed", "minus-one"]), 1);
    let unknown = write_config(dir.path(), "unknown.json", r#"{"penalty": {"betta": 1.0}}"#);
    assert_eq!(mombo(&["--quiet", "--config", &unknown, "--out", s(&out), "bounds"]), 1);
    let invalid = write_config(dir.path(), "invalid.json", r#"{"penalty": {"gamma": 1.5}}"#);
    assert_eq!(mombo(&["--quiet", "--config", &invalid, "--out", s(&out), "bounds"]), 1);
    assert_eq!(mombo(&["--quiet", "--config", "/nonexistent/run.json", "bounds"]), 1);
    assert_eq!(mombo(&["--quiet", "--out", s(&out), "eval-uq"]), 1);

    let diverging = SMALL.replace(
        r#""batch_size": 64}"#,
        r#""batch_size": 64, "critic_lr": 1e200, "actor_lr": 1e200}"#,
    );
    assert_ne!(diverging, SMALL);
    let cfg = write_config(dir.path(), "div.json", &diverging);
    assert_eq!(mombo(&["--quiet", "--config", &cfg, "--seed", "3", "--out", s(&out), "train"]), 2);
}

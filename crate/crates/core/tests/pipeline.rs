//! Full runs under mock providers against committed golden output.

use std::fs;
use std::path::{Path, PathBuf};

use hazeval_core::pipeline::{self, MetricToggles, ReportRow, RunConfig, Runtime};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config(tmp: &Path) -> RunConfig {
    let mut c = RunConfig::load(&fixtures().join("run.json")).unwrap();
    c.cache_dir = Some(tmp.join("cache"));
    c.output_dir = tmp.join("out");
    c
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read(&path).unwrap_or_else(|_| panic!("missing {}; run with BLESS=1", path.display()));
    assert!(expected == actual, "{name} differs from golden output");
}

#[test]
fn golden_run_and_warm_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let rt = Runtime::prepare(cfg.clone()).unwrap();
    let report = pipeline::run_with(&rt).unwrap();
    assert!(rt.total_calls() > 0);
    assert_eq!(report.exit_code(), 0, "{:?}", report.aggregate);
    pipeline::write_report(&report, &cfg.output_dir, true).unwrap();

    let rows = fs::read(cfg.output_dir.join(pipeline::ROWS_FILE)).unwrap();
    let agg = fs::read(cfg.output_dir.join(pipeline::AGGREGATE_FILE)).unwrap();
    check_golden("rows.jsonl", &rows);
    check_golden("aggregate.json", &agg);
    check_golden("metrics.csv", &fs::read(cfg.output_dir.join(pipeline::CSV_FILE)).unwrap());

    // aggregates are recomputable from the emitted rows
    let reread = pipeline::read_report(&cfg.output_dir).unwrap();
    assert_eq!(pipeline::aggregate_json(&reread.aggregate).unwrap(), agg);

    let warm = Runtime::prepare(cfg).unwrap();
    let again = pipeline::run_with(&warm).unwrap();
    assert_eq!(warm.total_calls(), 0);
    assert_eq!(pipeline::to_jsonl(&again.rows).unwrap(), rows);
}

#[test]
fn every_metric_is_present() {
    let tmp = tempfile::tempdir().unwrap();
    let report = pipeline::run(config(tmp.path())).unwrap();
    let metrics: Vec<_> = report
        .rows
        .iter()
        .filter_map(|r| match r {
            ReportRow::Metrics(m) => Some(m),
            _ => None,
        })
        .collect();
    assert_eq!(metrics.len(), 10);
    for m in metrics {
        for key in ["specificity", "relevance", "rerank_full_score", "rerank_changed", "cu", "cu_rel", "paraphrase", "perturbation", "fre", "fkgl"] {
            assert!(m.scores.contains_key(key), "{key} missing");
        }
        assert!(m.errors.is_empty(), "{:?}", m.errors);
    }
    let rob = report.rows.iter().filter(|r| matches!(r, ReportRow::Robustness(_))).count();
    assert_eq!(rob, 40);
}

#[test]
fn toggles_off_gives_dataset_rows_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.metrics = MetricToggles::none();
    let report = pipeline::run(cfg).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert!(report.rows.iter().all(|r| matches!(r, ReportRow::Answer(_))));
    assert!(report.aggregate.pairs.is_empty());
    assert_eq!(report.aggregate.generators[0].answers, 10);
}

#[test]
fn config_errors_fail_before_any_call() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.roles.reranker = Some("proxy".into());
    assert!(matches!(Runtime::prepare(cfg), Err(hazeval_core::Error::Config(_))));
    assert!(!tmp.path().join("cache").exists());
}

mod common;

use common::*;
use diagsearch::edgemap::EdgeMapConfig;
use diagsearch::pipeline::{load_triplets, run_pipeline};
use diagsearch::*;

#[test]
fn pipeline_runs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_pipeline(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(
        first.executed,
        ["ingest", "split", "pretrain", "finetune", "embed", "index", "eval"]
    );
    assert_eq!(first.report.method, "proposed_zero_shot");
    for k in [10, 20, 30] {
        let v = first.report.map_at(k).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let split = diagsearch::corpus::Split::load(&first.paths.split).unwrap();
    assert_eq!(split.train_ids.len(), 36);
    assert_eq!(first.report.per_query.len(), split.query_ids.len());

    let queries = split.query_set();
    for t in load_triplets(&first.paths.triplets).unwrap().triplets {
        for id in [&t.anchor_id, &t.positive_id, &t.negative_id] {
            assert!(!queries.contains(id.as_str()));
        }
    }

    let index = diagsearch::SimilarityIndex::load(&first.paths.index).unwrap();
    assert_eq!(index.len(), 60);

    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(again.executed, ["ingest"]);
    assert_eq!(again.report, first.report);

    let forced = run_pipeline(&diagsearch::pipeline::PipelineConfig {
        force: true,
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(forced.executed.len(), 7);
    assert_eq!(forced.report, first.report);
}

#[test]
fn one_shot_pipeline_with_edge_maps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_pipeline(dir.path());
    cfg.split.mode = SplitMode::OneShot;
    cfg.edgemap = Some(EdgeMapConfig::default());
    let out = run_pipeline(&cfg).unwrap();
    assert!(out.executed.contains(&"edgemap"));
    assert_eq!(out.report.method, "proposed_one_shot");
    assert!(out.paths.edges.join("manifest.jsonl").exists());

    let split = diagsearch::corpus::Split::load(&out.paths.split).unwrap();
    let queries = split.query_set();
    let mined = load_triplets(&out.paths.triplets).unwrap();
    assert!(!mined.triplets.is_empty());
    for t in &mined.triplets {
        if queries.contains(t.anchor_id.as_str()) {
            assert!(!queries.contains(t.positive_id.as_str()));
            assert!(!queries.contains(t.negative_id.as_str()));
        }
    }
}

#[test]
fn missing_manifest_fails_in_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = diagsearch::pipeline::PipelineConfig::new(dir.path().join("absent.jsonl"), dir.path().join("out"));
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "ingest"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn compare_methods_orders_reports() {
    let truth = random_truth(30, 3);
    let ids = truth.ids().to_vec();
    let cfg = EvalConfig::default();
    let perfect = mean_average_precision(&truth, &truth, &ids, &cfg, "truth").unwrap();
    let noise = random_truth(30, 4);
    let noisy = mean_average_precision(&noise, &truth, &ids, &cfg, "noise").unwrap();
    let table = compare_methods(&[noisy.clone(), perfect.clone()]).unwrap();
    assert_eq!(table.rows[0].0, "truth");
    let csv = table.to_csv();
    assert!(csv.starts_with("method,map@10,map@20,map@30\n"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
}

mod common;

use common::{toy, toy_config};
use cvtgad::checkpoint::Checkpoint;
use cvtgad::experiment::{
    ablation_grid, emit_results, read_run_json, run_on_dataset, run_suite_on, summary_csv, write_run_json,
};
use cvtgad::train::{score_graphs, train, TrainConfig};
use cvtgad::views::{build_views, view_dims};
use cvtgad::{run_experiment, Cvtgad, Error, LabelRule};

#[test]
fn toy_run_completes_with_finite_trace() {
    let r = run_experiment(&toy_config(5)).unwrap();
    assert_eq!(r.epochs.len(), 5);
    assert!(r.epochs.iter().all(|e| e.loss.is_finite()));
    assert_eq!(r.labels.anomalies, 2);
    assert_eq!(r.train_size, 8);
    assert_eq!(r.test_size, 4);
    assert!(r.test_scores.iter().all(|s| s.is_finite()));
    assert_eq!(r.recompute_auc().unwrap(), r.auc);
}

#[test]
fn same_seed_same_result() {
    let mut a = run_experiment(&toy_config(3)).unwrap();
    let mut b = run_experiment(&toy_config(3)).unwrap();
    a.wall_clock_secs = 0.0;
    b.wall_clock_secs = 0.0;
    assert_eq!(a, b);
    let bits = |r: &cvtgad::RunResult| r.test_scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn training_loss_decreases_on_average() {
    let r = run_experiment(&toy_config(5)).unwrap();
    let raw: Vec<f64> = r.epochs.iter().map(|e| e.node_loss + e.graph_loss).collect();
    let steps: Vec<f64> = raw.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    assert!(mean_step <= 0.0, "loss trace {raw:?}");
}

#[test]
fn test_graphs_never_touch_parameters() {
    let mut ds = toy();
    ds.assign_anomaly_labels(LabelRule::Minority).unwrap();
    let split = ds.make_split(0.2, 0).unwrap().clone();
    let cfg = toy_config(2);
    let views = build_views(&ds, &cfg.views).unwrap();
    let (df, ds_) = view_dims(&ds, &cfg.views);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut a = Cvtgad::new(cfg.model.clone(), df, ds_, 0).unwrap();
    train(&mut a, &ds, &views, &split.train, &tc).unwrap();

    // Scrambling every test graph's views must not change the trained weights.
    let mut poisoned = views.clone();
    for &i in &split.test {
        for x in poisoned[i].feature.data_mut() {
            *x = 1e3;
        }
    }
    let mut b = Cvtgad::new(cfg.model.clone(), df, ds_, 0).unwrap();
    train(&mut b, &ds, &poisoned, &split.train, &tc).unwrap();
    assert_eq!(a.store, b.store);
}

#[test]
fn json_round_trip_and_csv() {
    let r = run_experiment(&toy_config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    write_run_json(&r, &path).unwrap();
    assert_eq!(read_run_json(&path).unwrap(), r);

    emit_results(&[r.clone(), r.clone()], dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,variant,seed,auc");
    assert_eq!(lines.len(), 3);
    assert_eq!(csv, summary_csv(&[r.clone(), r]));
}

#[test]
fn checkpoint_reproduces_scores() {
    let cfg = toy_config(2);
    let run = run_on_dataset(&cfg, toy()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::from_run(&run).save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let model = ckpt.model().unwrap();
    assert_eq!(model.store, run.model.store);

    let mut ds = toy();
    ds.assign_anomaly_labels(cfg.label_rule()).unwrap();
    let views = build_views(&ds, &cfg.views).unwrap();
    let scores = score_graphs(
        &model,
        &ckpt.score_stats,
        &ds,
        &views,
        &run.result.test_indices,
        &cfg.eval,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(scores, run.result.test_scores);
}

#[test]
fn missing_dataset_reports_stage() {
    let mut cfg = toy_config(1);
    cfg.dataset = "NOPE".into();
    match run_experiment(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "parse"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn suite_keeps_failures_per_variant() {
    let base = toy_config(1);
    let mut grid = ablation_grid(&base);
    grid.truncate(2);
    grid[1].1.model.loss.tau = -1.0;
    let runs = run_suite_on(&toy(), &grid, &[0, 1]);
    assert_eq!(runs.len(), 4);
    assert!(runs.iter().filter(|r| r.variant == "full").all(|r| r.outcome.is_ok()));
    assert!(runs.iter().filter(|r| r.variant == "wo_l1").all(|r| r.outcome.is_err()));
}

#[test]
fn transformer_free_variant_has_no_cvt_parameters() {
    let grid = ablation_grid(&toy_config(1));
    let (_, cfg) = grid.iter().find(|(v, _)| v == "wo_transformer").unwrap();
    let m = Cvtgad::new(cfg.model.clone(), 3, 9, 0).unwrap();
    assert!(m.cvt.is_none());
    assert!(m.store.iter().all(|(name, _)| !name.starts_with("cvt.")));
}

//! End-to-end runs, the ablation grid, and result emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::cvt::{CrossedMatrix, Normalization};
use crate::error::{Error, Result, StageExt};
use crate::graph::{parse_tu_dataset, Dataset};
use crate::model::Cvtgad;
use crate::objective::{auc, mean_std, ScoreStats};
use crate::train::{fit_score_stats, score_graphs, train, EpochRecord};
use crate::views::{build_views, view_dims};

/// Fixed header of the CSV summary.
pub const CSV_HEADER: &str = "dataset,variant,seed,auc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub anomalous_class: i64,
    pub anomalies: usize,
    pub total: usize,
    pub anomaly_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub labels: LabelSummary,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochRecord>,
    pub score_stats: ScoreStats,
    pub test_indices: Vec<usize>,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<u8>,
    pub auc: f64,
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// AUC recomputed from the stored scores and labels.
    pub fn recompute_auc(&self) -> Result<f64> {
        auc(&self.test_scores, &self.test_labels)
    }
}

/// A finished run together with the model it trained.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub result: RunResult,
    pub model: Cvtgad,
    pub node_label_values: Vec<i64>,
}

/// Directory holding the TU files of `name`: `data_dir/name` when present,
/// otherwise `data_dir` itself.
pub fn locate_dataset(data_dir: &Path, name: &str) -> Result<PathBuf> {
    let marker = format!("{name}_A.txt");
    let nested = data_dir.join(name);
    if nested.join(&marker).is_file() {
        Ok(nested)
    } else if data_dir.join(&marker).is_file() {
        Ok(data_dir.to_path_buf())
    } else {
        Err(Error::Ingest(nested.join(marker)))
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = locate_dataset(&cfg.data_dir, &cfg.dataset).stage("parse")?;
    parse_tu_dataset(&dir, &cfg.dataset).stage("parse")
}

/// Parse, label, split, build views, train, fit statistics, score, AUC.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let dataset = load_dataset(cfg)?;
    Ok(run_on_dataset(cfg, dataset)?.result)
}

/// [`run_experiment`] on an already parsed dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, mut dataset: Dataset) -> Result<TrainedRun> {
    let start = Instant::now();
    let report = dataset.assign_anomaly_labels(cfg.label_rule()).stage("label")?;
    let split = dataset
        .make_split_with(cfg.test_fraction_normal, cfg.stratify, cfg.seed)
        .stage("split")?
        .clone();
    let views = build_views(&dataset, &cfg.views).stage("views")?;
    let (d_f, d_s) = view_dims(&dataset, &cfg.views);
    let mut model = Cvtgad::new(cfg.model.clone(), d_f, d_s, cfg.seed).stage("model")?;
    info!(
        "{} [{}] seed {}: {} train, {} test, {} parameters",
        dataset.name,
        cfg.variant,
        cfg.seed,
        split.train.len(),
        split.test.len(),
        model.store.num_scalars()
    );
    let epochs = train(&mut model, &dataset, &views, &split.train, &cfg.train_config()).stage("train")?;
    let stats = fit_score_stats(&model, &dataset, &views, &split.train, &cfg.eval, cfg.seed).stage("fit")?;
    let scores = score_graphs(&model, &stats, &dataset, &views, &split.test, &cfg.eval, cfg.seed).stage("score")?;
    let labels: Vec<u8> = split.test.iter().map(|&i| dataset.graphs[i].anomaly_label).collect();
    let auc = auc(&scores, &labels).stage("metric")?;
    info!("{} [{}] seed {}: AUC {:.4}", dataset.name, cfg.variant, cfg.seed, auc);
    let result = RunResult {
        dataset: dataset.name.clone(),
        variant: cfg.variant.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        labels: LabelSummary {
            anomalous_class: report.anomalous_class,
            anomalies: report.anomalies,
            total: report.total,
            anomaly_ratio: report.ratio(),
        },
        train_size: split.train.len(),
        test_size: split.test.len(),
        epochs,
        score_stats: stats,
        test_indices: split.test.clone(),
        test_scores: scores,
        test_labels: labels,
        auc,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun {
        result,
        model,
        node_label_values: dataset.node_label_values.clone(),
    })
}

/// The default ablation grid as `(variant, config)` pairs.
pub fn ablation_grid(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    type Tweak = fn(&mut ExperimentConfig);
    let tweaks: [(&str, Tweak); 11] = [
        ("full", |_| {}),
        ("wo_l1", |c| {
            c.model.cvt.attention.normalization = Normalization::SoftmaxOnly
        }),
        ("wo_cm", |c| c.model.cvt.attention.crossed_matrix = CrossedMatrix::None),
        ("wo_both", |c| {
            c.model.cvt.attention.normalization = Normalization::SoftmaxOnly;
            c.model.cvt.attention.crossed_matrix = CrossedMatrix::None;
        }),
        ("wo_transformer", |c| c.model.cvt.enabled = false),
        ("cross_q", |c| c.model.cvt.attention.crossed_matrix = CrossedMatrix::Q),
        ("cross_v", |c| c.model.cvt.attention.crossed_matrix = CrossedMatrix::V),
        ("proj_1", |c| c.model.cvt.proj_layers = 1),
        ("proj_3", |c| c.model.cvt.proj_layers = 3),
        ("res_1", |c| c.model.cvt.residual_layers = 1),
        ("res_3", |c| c.model.cvt.residual_layers = 3),
    ];
    tweaks
        .iter()
        .map(|(name, tweak)| {
            let mut c = base.clone();
            tweak(&mut c);
            c.variant = (*name).to_string();
            (name.to_string(), c)
        })
        .collect()
}

/// One cell of an ablation suite.
#[derive(Clone, Debug)]
pub struct SuiteRun {
    pub variant: String,
    pub seed: u64,
    pub outcome: std::result::Result<RunResult, String>,
}

/// Runs every variant of `grid` for every seed on `dataset`. Failures are
/// kept per cell.
pub fn run_suite_on(dataset: &Dataset, grid: &[(String, ExperimentConfig)], seeds: &[u64]) -> Vec<SuiteRun> {
    let cells: Vec<(&String, &ExperimentConfig, u64)> = grid
        .iter()
        .flat_map(|(v, c)| seeds.iter().map(move |&s| (v, c, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(variant, cfg, seed)| {
            let cfg = ExperimentConfig { seed, ..cfg.clone() };
            let outcome = run_on_dataset(&cfg, dataset.clone())
                .map(|t| t.result)
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                warn!("{variant} seed {seed} failed: {e}");
            }
            SuiteRun {
                variant: variant.clone(),
                seed,
                outcome,
            }
        })
        .collect()
}

/// The default ablation grid over `seeds`.
pub fn run_ablation_suite(base: &ExperimentConfig, seeds: &[u64]) -> Vec<SuiteRun> {
    let grid = ablation_grid(base);
    match load_dataset(base) {
        Ok(dataset) => run_suite_on(&dataset, &grid, seeds),
        Err(e) => grid
            .iter()
            .flat_map(|(v, _)| {
                let msg = e.to_string();
                seeds.iter().map(move |&seed| SuiteRun {
                    variant: v.clone(),
                    seed,
                    outcome: Err(msg.clone()),
                })
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub variant: String,
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub avg_rank: f64,
}

/// Mean AUC and average per-seed rank (1 = best, ties share the mean rank)
/// of every variant, in first-appearance order.
pub fn rank_table(results: &[RunResult]) -> Vec<RankRow> {
    let mut order: Vec<String> = Vec::new();
    let mut aucs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut ranks: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut by_seed: BTreeMap<u64, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
        aucs.entry(&r.variant).or_default().push(r.auc);
        by_seed.entry(r.seed).or_default().push(r);
    }
    for runs in by_seed.values() {
        for r in runs {
            let better = runs.iter().filter(|o| o.auc > r.auc).count() as f64;
            let tied = runs.iter().filter(|o| o.auc == r.auc).count() as f64;
            ranks.entry(&r.variant).or_default().push(better + (tied + 1.0) / 2.0);
        }
    }
    order
        .iter()
        .map(|v| {
            let a = &aucs[v.as_str()];
            let (mean_auc, std_auc) = mean_std(a);
            let rk = &ranks[v.as_str()];
            RankRow {
                variant: v.clone(),
                runs: a.len(),
                mean_auc,
                std_auc: if a.len() > 1 { std_auc } else { 0.0 },
                avg_rank: rk.iter().sum::<f64>() / rk.len() as f64,
            }
        })
        .collect()
}

pub fn rank_table_csv(rows: &[RankRow]) -> String {
    let mut out = String::from("variant,runs,mean_auc,std_auc,avg_rank\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.3}\n",
            r.variant, r.runs, r.mean_auc, r.std_auc, r.avg_rank
        ));
    }
    out
}

/// One line per run under [`CSV_HEADER`], in the given order.
pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        out.push_str(&format!("{},{},{},{}\n", r.dataset, r.variant, r.seed, r.auc));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_run_json(result: &RunResult, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(result).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &text)
}

pub fn read_run_json(path: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run_file_name(r: &RunResult) -> String {
    format!("{}_{}_seed{}.json", r.dataset, r.variant, r.seed)
}

/// Writes `runs/<dataset>_<variant>_seed<k>.json` per run and `summary.csv`
/// under `dir`.
pub fn emit_results(results: &[RunResult], dir: &Path) -> Result<()> {
    for r in results {
        write_run_json(r, &dir.join("runs").join(run_file_name(r)))?;
    }
    write_file(&dir.join("summary.csv"), &summary_csv(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(variant: &str, seed: u64, auc: f64) -> RunResult {
        RunResult {
            dataset: "toy".into(),
            variant: variant.into(),
            seed,
            config: ExperimentConfig::default(),
            labels: LabelSummary {
                anomalous_class: 1,
                anomalies: 1,
                total: 2,
                anomaly_ratio: 0.5,
            },
            train_size: 1,
            test_size: 2,
            epochs: vec![],
            score_stats: ScoreStats {
                mu_node: 0.0,
                sigma_node: 1.0,
                mu_graph: 0.0,
                sigma_graph: 1.0,
                alpha: 1.0,
                lambda_node: 1.0,
                lambda_graph: 1.0,
            },
            test_indices: vec![0, 1],
            test_scores: vec![0.25, 0.5],
            test_labels: vec![0, 1],
            auc,
            wall_clock_secs: 0.5,
        }
    }

    #[test]
    fn default_grid_has_eleven_variants() {
        let grid = ablation_grid(&ExperimentConfig::default());
        assert_eq!(grid.len(), 11);
        let (name, cfg) = &grid[4];
        assert_eq!(name, "wo_transformer");
        assert!(!cfg.model.cvt.enabled);
        assert_eq!(grid[0].1.model, ExperimentConfig::default().model);
    }

    #[test]
    fn csv_summary() {
        let csv = summary_csv(&[fake("full", 0, 0.75), fake("wo_cm", 0, 1.0)]);
        assert_eq!(csv, "dataset,variant,seed,auc\ntoy,full,0,0.75\ntoy,wo_cm,0,1\n");
    }

    #[test]
    fn ranks_average_ties() {
        let rows = rank_table(&[
            fake("a", 0, 0.9),
            fake("b", 0, 0.9),
            fake("c", 0, 0.5),
            fake("a", 1, 0.8),
            fake("b", 1, 0.7),
            fake("c", 1, 0.9),
        ]);
        assert_eq!(rows[0].avg_rank, 1.75);
        assert_eq!(rows[1].avg_rank, 2.25);
        assert_eq!(rows[2].avg_rank, 2.0);
        assert!((rows[0].mean_auc - 0.85).abs() < 1e-12);
    }

    #[test]
    fn stored_auc_is_recomputable() {
        assert_eq!(fake("full", 0, 1.0).recompute_auc().unwrap(), 1.0);
    }
}

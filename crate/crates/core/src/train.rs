//! Seeded training loop, score statistics and test-set scoring.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Dataset, GraphBatch};
use crate::model::Cvtgad;
use crate::objective::{adaptive_weights, anomaly_score, total_loss, LossHistory, ScoreStats};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::Tape;
use crate::views::ViewPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            optim: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// How graphs are grouped when computing losses outside training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// A set with at most this many nodes in total is scored as one batch.
    pub max_nodes: usize,
    /// Batch size used for larger sets.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_nodes: 2048,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the weighted objective.
    pub loss: f64,
    pub node_loss: f64,
    pub graph_loss: f64,
    pub lambda_node: f64,
    pub lambda_graph: f64,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Trains `model` on the graphs listed in `train` only.
pub fn train(
    model: &mut Cvtgad,
    dataset: &Dataset,
    views: &[ViewPair],
    train: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::Protocol("empty training set".into()));
    }
    let alpha = model.config.loss.alpha;
    let mut state = AdamState::new(model.store.values());
    let mut previous: Option<LossHistory> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (lambda_node, lambda_graph) = adaptive_weights(previous.as_ref(), alpha);
        let batches = batch_graphs(dataset, train, cfg.batch_size, true, epoch_seed(cfg.seed, epoch))?;
        let mut history = LossHistory::default();
        let mut batch_losses = Vec::with_capacity(batches.len());
        for batch in &batches {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bound, batch, views)?;
            let loss = total_loss(&mut tape, out.node.mean, out.graph.mean, lambda_node, lambda_graph)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Protocol(format!("non-finite training loss at epoch {epoch}")));
            }
            tape.backward(loss)?;
            let grads = model.store.grads(&tape, &bound);
            adam_step(model.store.values_mut(), &grads, &mut state, &cfg.optim)?;
            history.extend(
                tape.value(out.node.per_graph).data(),
                tape.value(out.graph.per_graph).data(),
            );
            batch_losses.push(value);
        }
        let record = EpochRecord {
            epoch,
            loss: mean(&batch_losses),
            node_loss: mean(&history.node),
            graph_loss: mean(&history.graph),
            lambda_node,
            lambda_graph,
        };
        debug!(
            "epoch {epoch}: loss {:.6} (node {:.6}, graph {:.6})",
            record.loss, record.node_loss, record.graph_loss
        );
        records.push(record);
        previous = Some(history);
    }
    if let Some(last) = records.last() {
        info!("trained {} epochs, final loss {:.6}", records.len(), last.loss);
    }
    Ok(records)
}

/// Batches used to evaluate `indices`: one batch when the set is small
/// enough, otherwise seeded fixed-size chunks.
pub fn eval_batches(dataset: &Dataset, indices: &[usize], cfg: &EvalConfig, seed: u64) -> Result<Vec<GraphBatch>> {
    let nodes: usize = indices.iter().map(|&i| dataset.graphs[i].node_count).sum();
    if nodes <= cfg.max_nodes {
        return Ok(vec![GraphBatch::from_indices(dataset, indices)?]);
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    batch_graphs(dataset, &order, cfg.batch_size, false, seed)
}

/// Per-graph losses for `indices`, returned in the order of `indices`.
pub fn evaluate_losses(
    model: &Cvtgad,
    dataset: &Dataset,
    views: &[ViewPair],
    indices: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<LossHistory> {
    let batches = eval_batches(dataset, indices, cfg, seed)?;
    let per_batch: Vec<(Vec<f64>, Vec<f64>)> = batches
        .par_iter()
        .map(|b| model.batch_losses(b, views))
        .collect::<Result<_>>()?;
    let mut node = vec![f64::NAN; dataset.len()];
    let mut graph = vec![f64::NAN; dataset.len()];
    for (batch, (ln, lg)) in batches.iter().zip(per_batch) {
        for (pos, &gi) in batch.graph_indices.iter().enumerate() {
            node[gi] = ln[pos];
            graph[gi] = lg[pos];
        }
    }
    Ok(LossHistory {
        node: indices.iter().map(|&i| node[i]).collect(),
        graph: indices.iter().map(|&i| graph[i]).collect(),
    })
}

/// Loss statistics over the training graphs under the trained model.
pub fn fit_score_stats(
    model: &Cvtgad,
    dataset: &Dataset,
    views: &[ViewPair],
    train: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ScoreStats> {
    let history = evaluate_losses(model, dataset, views, train, cfg, seed)?;
    ScoreStats::from_losses(&history, model.config.loss.alpha)
}

/// Anomaly scores of the graphs in one fixed batch, in batch order.
pub fn score_batch(model: &Cvtgad, stats: &ScoreStats, batch: &GraphBatch, views: &[ViewPair]) -> Result<Vec<f64>> {
    let (node, graph) = model.batch_losses(batch, views)?;
    Ok(node
        .iter()
        .zip(&graph)
        .map(|(&n, &g)| anomaly_score(n, g, stats))
        .collect())
}

/// Anomaly scores for `indices`, in the order of `indices`.
pub fn score_graphs(
    model: &Cvtgad,
    stats: &ScoreStats,
    dataset: &Dataset,
    views: &[ViewPair],
    indices: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let losses = evaluate_losses(model, dataset, views, indices, cfg, seed)?;
    Ok(losses
        .node
        .iter()
        .zip(&losses.graph)
        .map(|(&n, &g)| anomaly_score(n, g, stats))
        .collect())
}

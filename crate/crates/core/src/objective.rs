//! Cross-view contrastive losses, adaptive loss weights, anomaly scores and
//! ROC AUC.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Guard added to the norm product in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Floor applied to every standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.2, alpha: 1.0 }
    }
}

/// `u·v / (‖u‖‖v‖ + ε)` for plain vectors.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv + COSINE_EPS)
}

/// Differentiable cosine-similarity matrix between the rows of `a` and `b`.
pub fn cosine_matrix(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let bt = tape.transpose(b);
    let dots = tape.matmul(a, bt)?;
    let na = row_norms(tape, a)?;
    let nb = row_norms(tape, b)?;
    let nbt = tape.transpose(nb);
    let outer = tape.matmul(na, nbt)?;
    let denom = tape.add_scalar(outer, COSINE_EPS);
    tape.div(dots, denom)
}

fn row_norms(tape: &mut Tape, a: Var) -> Result<Var> {
    let sq = tape.mul(a, a)?;
    let s = tape.row_sum(sq);
    tape.sqrt(s)
}

/// Per-row InfoNCE terms `-log(e^{S_ii/τ} / Σ_{k≠i} e^{S_ik/τ})` for a square
/// similarity matrix. Returns an `n×1` column; with `n = 1` the negative set
/// is empty and the term is 0.
fn info_nce_rows(tape: &mut Tape, sim: Var, tau: f64) -> Result<Var> {
    let n = tape.dims(sim).0;
    if n < 2 {
        return Ok(tape.constant(Tensor::zeros(&[n, 1])));
    }
    let logits = tape.scale(sim, 1.0 / tau);
    let e = tape.exp(logits);
    let mut mask = Tensor::ones(&[n, n]);
    for i in 0..n {
        mask.data_mut()[i * n + i] = 0.0;
    }
    let mask = tape.constant(mask);
    let neg = tape.mul(e, mask)?;
    let denom = tape.row_sum(neg);
    let log_denom = tape.log(denom)?;
    let pos = tape.diag(logits)?;
    tape.sub(log_denom, pos)
}

/// Symmetrised per-row loss `(ℓ(f→s) + ℓ(s→f)) / 2`, `n×1`.
fn symmetric_rows(tape: &mut Tape, h_f: Var, h_s: Var, tau: f64) -> Result<Var> {
    let sim = cosine_matrix(tape, h_f, h_s)?;
    let l_fs = info_nce_rows(tape, sim, tau)?;
    let sim_t = tape.transpose(sim);
    let l_sf = info_nce_rows(tape, sim_t, tau)?;
    let both = tape.add(l_fs, l_sf)?;
    Ok(tape.scale(both, 0.5))
}

/// Per-graph loss column (`m×1`) and its batch mean.
#[derive(Clone, Copy, Debug)]
pub struct LevelLoss {
    pub per_graph: Var,
    pub mean: Var,
}

/// Node-level loss: negatives for node `i` are the other nodes of its own
/// graph. Single-node graphs contribute 0.
pub fn node_loss(tape: &mut Tape, h_f: Var, h_s: Var, offsets: &[usize], tau: f64) -> Result<LevelLoss> {
    let n = tape.dims(h_f).0;
    if tape.dims(h_s).0 != n {
        return Err(Error::contract("node embeddings of the two views are not aligned"));
    }
    let mut per_graph = Vec::with_capacity(offsets.len());
    for (p, &start) in offsets.iter().enumerate() {
        let end = offsets.get(p + 1).copied().unwrap_or(n);
        if end <= start {
            return Err(Error::contract(format!("graph {p} has no nodes")));
        }
        let rows: Vec<usize> = (start..end).collect();
        let f = tape.gather_rows(h_f, rows.clone())?;
        let s = tape.gather_rows(h_s, rows)?;
        if end - start == 1 {
            log::debug!("single-node graph at batch position {p}: node loss is 0");
        }
        let l = symmetric_rows(tape, f, s, tau)?;
        let seg = Arc::new(vec![0; end - start]);
        per_graph.push(tape.segment_mean(l, seg, 1)?);
    }
    let per_graph = tape.concat_rows(&per_graph)?;
    let mean = tape.mean(per_graph);
    Ok(LevelLoss { per_graph, mean })
}

/// Graph-level loss with the other graphs of the batch as negatives.
pub fn graph_loss(tape: &mut Tape, g_f: Var, g_s: Var, tau: f64) -> Result<LevelLoss> {
    let m = tape.dims(g_f).0;
    if tape.dims(g_s).0 != m {
        return Err(Error::contract("graph embeddings of the two views are not aligned"));
    }
    if m == 1 {
        log::warn!("graph-level loss on a batch of one graph has no negatives; using 0");
    }
    let per_graph = symmetric_rows(tape, g_f, g_s, tau)?;
    let mean = tape.mean(per_graph);
    Ok(LevelLoss { per_graph, mean })
}

/// `λ₁ L_node + λ₂ L_graph`.
pub fn total_loss(tape: &mut Tape, node: Var, graph: Var, lambda_node: f64, lambda_graph: f64) -> Result<Var> {
    let a = tape.scale(node, lambda_node);
    let b = tape.scale(graph, lambda_graph);
    tape.add(a, b)
}

/// Population mean and standard deviation (floored at [`SIGMA_FLOOR`]).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, SIGMA_FLOOR);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Per-graph losses gathered over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub node: Vec<f64>,
    pub graph: Vec<f64>,
}

impl LossHistory {
    pub fn extend(&mut self, node: &[f64], graph: &[f64]) {
        self.node.extend_from_slice(node);
        self.graph.extend_from_slice(graph);
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }
}

/// `(σ_node^α, σ_graph^α)` from the previous epoch, or `(1, 1)` before any.
pub fn adaptive_weights(previous: Option<&LossHistory>, alpha: f64) -> (f64, f64) {
    match previous {
        Some(h) if !h.is_empty() => {
            let (_, sn) = mean_std(&h.node);
            let (_, sg) = mean_std(&h.graph);
            (sn.powf(alpha), sg.powf(alpha))
        }
        _ => (1.0, 1.0),
    }
}

/// Training-set loss statistics used to normalise anomaly scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mu_node: f64,
    pub sigma_node: f64,
    pub mu_graph: f64,
    pub sigma_graph: f64,
    pub alpha: f64,
    pub lambda_node: f64,
    pub lambda_graph: f64,
}

impl ScoreStats {
    pub fn from_losses(history: &LossHistory, alpha: f64) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::Protocol(
                "cannot fit score statistics on an empty training set".into(),
            ));
        }
        let (mu_node, sigma_node) = mean_std(&history.node);
        let (mu_graph, sigma_graph) = mean_std(&history.graph);
        Ok(Self {
            mu_node,
            sigma_node,
            mu_graph,
            sigma_graph,
            alpha,
            lambda_node: sigma_node.powf(alpha),
            lambda_graph: sigma_graph.powf(alpha),
        })
    }
}

/// Sum of the z-scored node- and graph-level losses.
pub fn anomaly_score(node: f64, graph: f64, stats: &ScoreStats) -> f64 {
    (node - stats.mu_node) / stats.sigma_node + (graph - stats.mu_graph) / stats.sigma_graph
}

/// Probability that a random anomaly outscores a random normal graph, ties
/// counting one half (Mann–Whitney U / (n₁ n₀)).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {s} is not comparable")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both normal and anomalous samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tied runs.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

//! Feature and structure views of a graph. Neither view touches the
//! topology; they only differ in the node-feature matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub walk_steps: usize,
    pub use_node_labels: bool,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            walk_steps: 8,
            use_node_labels: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub feature: Tensor,
    pub structure: Tensor,
}

impl ViewPair {
    pub fn node_count(&self) -> usize {
        self.feature.rows()
    }
}

/// Raw attributes, followed by a one-hot node label over `label_values`
/// when requested. Plain graphs get a single constant column.
pub fn build_feature_view(g: &Graph, label_values: &[i64], use_node_labels: bool) -> Tensor {
    let one_hot = use_node_labels && !label_values.is_empty();
    let attr_dim = g.node_attributes.as_ref().map_or(0, Tensor::cols);
    let label_dim = if one_hot { label_values.len() } else { 0 };
    let width = attr_dim + label_dim;
    if width == 0 {
        return Tensor::ones(&[g.node_count, 1]);
    }
    let mut data = Vec::with_capacity(g.node_count * width);
    for v in 0..g.node_count {
        if let Some(x) = &g.node_attributes {
            data.extend_from_slice(x.row(v));
        }
        if one_hot {
            let mut hot = vec![0.0; label_dim];
            if let Some(label) = g.node_labels.as_ref().map(|l| l[v]) {
                if let Ok(k) = label_values.binary_search(&label) {
                    hot[k] = 1.0;
                }
            }
            data.extend(hot);
        }
    }
    Tensor::matrix(g.node_count, width, data).expect("row widths are uniform")
}

/// Row `i` is `[p_1(i), …, p_k(i), deg(i) / max_deg]`, where `p_t(i)` is the
/// probability that a uniform random walk from `i` is back at `i` after `t`
/// steps, i.e. the diagonal of `(D⁻¹A)^t`.
pub fn build_structure_view(g: &Graph, walk_steps: usize) -> Result<Tensor> {
    if walk_steps == 0 {
        return Err(Error::Config("views.walk_steps must be at least 1".into()));
    }
    let n = g.node_count;
    let adj = g.adjacency_lists();
    let deg = g.degrees();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let width = walk_steps + 1;
    let mut out = vec![0.0; n * width];

    // Row i of the current walk matrix M = (D⁻¹A)^t, advanced by M ← M·P.
    let mut walk = vec![0.0; n * n];
    for i in 0..n {
        for &j in &adj[i] {
            walk[i * n + j] += 1.0 / deg[i] as f64;
        }
    }
    let mut next = vec![0.0; n * n];
    for t in 0..walk_steps {
        for i in 0..n {
            out[i * width + t] = walk[i * n + i];
        }
        if t + 1 == walk_steps {
            break;
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            for l in 0..n {
                let m = walk[i * n + l];
                if m == 0.0 {
                    continue;
                }
                let share = m / deg[l] as f64;
                for &j in &adj[l] {
                    next[i * n + j] += share;
                }
            }
        }
        std::mem::swap(&mut walk, &mut next);
    }
    if max_deg > 0 {
        for i in 0..n {
            out[i * width + walk_steps] = deg[i] as f64 / max_deg as f64;
        }
    }
    Tensor::matrix(n, width, out)
}

pub fn make_view_pair(g: &Graph, label_values: &[i64], cfg: &ViewConfig) -> Result<ViewPair> {
    Ok(ViewPair {
        feature: build_feature_view(g, label_values, cfg.use_node_labels),
        structure: build_structure_view(g, cfg.walk_steps)?,
    })
}

/// View pairs for every graph of `dataset`, in dataset order.
pub fn build_views(dataset: &Dataset, cfg: &ViewConfig) -> Result<Vec<ViewPair>> {
    dataset
        .graphs
        .iter()
        .map(|g| make_view_pair(g, &dataset.node_label_values, cfg))
        .collect()
}

/// `(d_f, d_s)` produced by `cfg` on `dataset`.
pub fn view_dims(dataset: &Dataset, cfg: &ViewConfig) -> (usize, usize) {
    let label_dim = if cfg.use_node_labels {
        dataset.node_label_values.len()
    } else {
        0
    };
    let d_f = (dataset.attr_dim + label_dim).max(1);
    (d_f, cfg.walk_steps + 1)
}

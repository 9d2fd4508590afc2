//! GIN / GCN encoders and mean-pool readout, producing the preliminary node
//! and graph embeddings of each view.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::params::{glorot, Bound, Mlp, ParamId, ParamStore};
use crate::tensor::{Propagation, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gin,
    Gcn,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gin" => Ok(EncoderKind::Gin),
            "gcn" => Ok(EncoderKind::Gcn),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Gin => "gin",
            EncoderKind::Gcn => "gcn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gin,
            layers: 2,
            hidden_dim: 16,
        }
    }
}

/// `(I + A)` as weighted entries: GIN aggregation with ε = 0.
pub fn gin_propagation(node_count: usize, edges: &[(usize, usize)]) -> Propagation {
    let mut p = Vec::with_capacity(node_count + 2 * edges.len());
    p.extend((0..node_count).map(|i| (i, i, 1.0)));
    for &(a, b) in edges {
        p.push((a, b, 1.0));
        p.push((b, a, 1.0));
    }
    Arc::new(p)
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` as weighted entries.
pub fn gcn_propagation(node_count: usize, edges: &[(usize, usize)]) -> Propagation {
    let mut deg = vec![1.0f64; node_count];
    for &(a, b) in edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut p = Vec::with_capacity(node_count + 2 * edges.len());
    p.extend((0..node_count).map(|i| (i, i, inv[i] * inv[i])));
    for &(a, b) in edges {
        let w = inv[a] * inv[b];
        p.push((a, b, w));
        p.push((b, a, w));
    }
    Arc::new(p)
}

/// `MLP(h_i + Σ_{j∈N(i)} h_j)`; `prop` must come from [`gin_propagation`].
pub fn gin_layer(tape: &mut Tape, bound: &Bound, h: Var, prop: &Propagation, mlp: &Mlp) -> Result<Var> {
    let agg = tape.propagate(h, prop.clone())?;
    mlp.forward(tape, bound, agg)
}

/// `ReLU(Â_norm · H · W)`; `prop` must come from [`gcn_propagation`].
pub fn gcn_layer(tape: &mut Tape, bound: &Bound, h: Var, prop: &Propagation, weight: ParamId) -> Result<Var> {
    let agg = tape.propagate(h, prop.clone())?;
    let hw = tape.matmul(agg, bound.var(weight))?;
    Ok(tape.relu(hw))
}

pub fn readout_mean(tape: &mut Tape, nodes: Var, membership: &Arc<Vec<usize>>, graphs: usize) -> Result<Var> {
    tape.segment_mean(nodes, membership.clone(), graphs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EncoderLayer {
    Gin(Mlp),
    Gcn(ParamId),
}

/// One view's stack of message-passing layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden_dim == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "{name}: encoder needs layers ≥ 1 and positive dims (layers {}, in {in_dim}, hidden {})",
                cfg.layers, cfg.hidden_dim
            )));
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { in_dim } else { cfg.hidden_dim };
            let layer_name = format!("{name}.{}{l}", cfg.kind);
            layers.push(match cfg.kind {
                EncoderKind::Gin => EncoderLayer::Gin(Mlp::new(
                    store,
                    rng,
                    &layer_name,
                    d_in,
                    cfg.hidden_dim,
                    cfg.hidden_dim,
                    2,
                    true,
                )?),
                EncoderKind::Gcn => {
                    EncoderLayer::Gcn(store.add(format!("{layer_name}.weight"), glorot(rng, d_in, cfg.hidden_dim)))
                }
            });
        }
        Ok(Self {
            kind: cfg.kind,
            in_dim,
            hidden_dim: cfg.hidden_dim,
            layers,
        })
    }

    pub fn propagation(&self, batch: &GraphBatch) -> Propagation {
        match self.kind {
            EncoderKind::Gin => gin_propagation(batch.node_count, &batch.edges),
            EncoderKind::Gcn => gcn_propagation(batch.node_count, &batch.edges),
        }
    }

    /// Final-layer node embeddings.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, prop: &Propagation) -> Result<Var> {
        let (_, d) = tape.dims(x);
        if d != self.in_dim {
            return Err(Error::Config(format!(
                "encoder expects input width {}, view has {d}",
                self.in_dim
            )));
        }
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                EncoderLayer::Gin(mlp) => gin_layer(tape, bound, h, prop, mlp)?,
                EncoderLayer::Gcn(w) => gcn_layer(tape, bound, h, prop, *w)?,
            };
        }
        Ok(h)
    }
}

/// Node- and graph-level embeddings of both views for one batch.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub node_f: Var,
    pub node_s: Var,
    pub graph_f: Var,
    pub graph_s: Var,
    pub membership: Arc<Vec<usize>>,
    pub offsets: Vec<usize>,
    pub graphs: usize,
}

impl EmbeddingBatch {
    pub fn node_range(&self, pos: usize, node_count: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(pos + 1).copied().unwrap_or(node_count);
        self.offsets[pos]..end
    }
}

/// Runs both view encoders and the mean readout.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    batch: &GraphBatch,
    x_f: Var,
    x_s: Var,
    enc_f: &Encoder,
    enc_s: &Encoder,
) -> Result<EmbeddingBatch> {
    let prop_f = enc_f.propagation(batch);
    let prop_s = if enc_s.kind == enc_f.kind {
        prop_f.clone()
    } else {
        enc_s.propagation(batch)
    };
    let node_f = enc_f.forward(tape, bound, x_f, &prop_f)?;
    let node_s = enc_s.forward(tape, bound, x_s, &prop_s)?;
    let graph_f = readout_mean(tape, node_f, &batch.membership, batch.len())?;
    let graph_s = readout_mean(tape, node_s, &batch.membership, batch.len())?;
    Ok(EmbeddingBatch {
        node_f,
        node_s,
        graph_f,
        graph_s,
        membership: batch.membership.clone(),
        offsets: batch.offsets.clone(),
        graphs: batch.len(),
    })
}
